"""Label-preserving sample augmentation.

Images (rows with an ``image_shape``) get a random shift, rotation, shear and
zoom through one affine resampling.  Plain feature vectors get Gaussian
jitter scaled by the per-feature spread of the class they were drawn from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import ClientDataset


@dataclass(frozen=True)
class AugmentationPolicy:
    theta: float = 0.8
    max_growth: float = 4.0
    # samples per augmentation batch; None uses the class's original count
    batch_size: int | None = None
    max_shift: float = 2.0
    max_rotation: float = 15.0
    max_shear: float = 0.1
    zoom_range: tuple[float, float] = (0.9, 1.1)
    jitter_scale: float = 0.3

    def validate(self) -> list[str]:
        errs = []
        if not 0 <= self.theta <= 1:
            errs.append("theta must lie in [0, 1]")
        if self.max_growth < 1:
            errs.append("max_growth must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.jitter_scale < 0:
            errs.append("jitter_scale must be >= 0")
        lo, hi = self.zoom_range
        if not 0 < lo <= hi:
            errs.append("zoom_range must satisfy 0 < lo <= hi")
        return errs


def affine_image(
    image: np.ndarray,
    rotation_deg: float = 0.0,
    shift: tuple[float, float] = (0.0, 0.0),
    shear: float = 0.0,
    zoom: float = 1.0,
) -> np.ndarray:
    """Resample ``image`` under a rotation/shear/zoom about its centre plus a shift.

    The identity parameters return a bitwise copy.
    """
    if rotation_deg == 0.0 and shift == (0.0, 0.0) and shear == 0.0 and zoom == 1.0:
        return image.copy()
    a = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    fwd = rot @ shr * zoom
    inv = np.linalg.inv(fwd)
    centre = (np.array(image.shape, dtype=np.float64) - 1.0) / 2.0
    offset = centre - inv @ (centre + np.asarray(shift, dtype=np.float64))
    return ndimage.affine_transform(image, inv, offset=offset, order=1, mode="grid-constant", cval=0.0)


def augment_sample(
    features: np.ndarray,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
    image_shape: tuple[int, int] | None = None,
    feature_scale: np.ndarray | None = None,
) -> np.ndarray:
    """One random transform of a single sample; the label is untouched by construction."""
    if image_shape is not None:
        img = features.reshape(image_shape)
        out = affine_image(
            img,
            rotation_deg=rng.uniform(-policy.max_rotation, policy.max_rotation),
            shift=tuple(rng.uniform(-policy.max_shift, policy.max_shift, size=2)),
            shear=rng.uniform(-policy.max_shear, policy.max_shear),
            zoom=rng.uniform(*policy.zoom_range),
        )
        return out.ravel()
    scale = np.ones_like(features) if feature_scale is None else feature_scale
    return features + rng.normal(0.0, 1.0, size=features.shape) * policy.jitter_scale * scale


def augment_class(
    cls: ClientDataset,
    count: int,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> ClientDataset:
    """``count`` augmented copies of randomly chosen rows of ``cls`` (one class)."""
    src = rng.integers(0, len(cls), size=count)
    scale = cls.features.std(axis=0) if len(cls) > 1 else np.ones(cls.n_features)
    scale = np.where(scale > 0, scale, 1.0)
    feats = np.array(
        [augment_sample(cls.features[i], policy, rng, cls.image_shape, scale) for i in src]
    ).reshape(count, cls.n_features)
    return ClientDataset(
        feats,
        cls.labels[src],
        cls.n_classes,
        cls.owner_id,
        np.ones(count, dtype=bool),
        cls.image_shape,
        np.full(count, -1, dtype=np.int64),
    )
