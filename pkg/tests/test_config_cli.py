import json

import numpy as np
import pytest

from popalign import cli
from popalign.config import PRESETS, ExperimentConfig, load_config
from popalign.data import label_distribution
from popalign.errors import ConfigurationError
from popalign.experiment import build


class TestPresets:
    @pytest.mark.parametrize("name", PRESETS)
    def test_valid(self, name):
        cfg, errs = load_config(preset=name)
        assert not errs, errs
        assert cfg.name == name

    def test_setting_grid(self):
        expect = {"setting1": (1.0, None), "setting2": (0.1, None),
                  "setting3": (1.0, [0.5, 1.0]), "setting4": (0.1, [0.5, 1.0])}
        for name, (alpha, imb) in expect.items():
            cfg, _ = load_config(preset=name)
            assert (cfg.partition.alpha, cfg.data.imbalance) == (alpha, imb)
            assert (cfg.partition.n_clients, cfg.data.n_classes) == (10, 5)

    def test_setting1_population_balanced(self):
        cfg, _ = load_config(preset="setting1")
        setup = build(cfg)
        p = label_distribution(setup.population)
        assert np.abs(p - 0.2).max() < 0.01

    def test_setting3_population_imbalanced(self):
        cfg, _ = load_config(preset="setting3")
        p = label_distribution(build(cfg).population)
        assert np.abs(p - 0.2).max() > 0.01

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            load_config(preset="nope")


class TestValidation:
    def test_defaults_valid(self):
        assert ExperimentConfig().validate() == []

    def test_k_exceeds_n(self):
        _, errs = load_config(preset="desk", overrides={"training": {"clients_per_round": 11}})
        assert any(e.startswith("training.clients_per_round:") and "N=10" in e for e in errs)

    def test_gamma_below_one(self):
        _, errs = load_config(preset="desk", overrides={"attack": {"poison": {"gamma": 0.5}}})
        assert [e for e in errs if e.startswith("attack.poison.gamma:")]

    def test_all_violations_listed(self):
        bad = {"rounds": 0, "partition": {"alpha": -1}, "defense": {"kind": "krum"}, "attack": {"trigger": {"target_label": 9}}}
        _, errs = load_config(preset="desk", overrides=bad)
        paths = {e.split(":")[0] for e in errs}
        assert {"rounds", "partition.alpha", "defense.kind", "attack.trigger.target_label"} <= paths

    def test_unknown_field(self):
        _, errs = load_config(preset="desk", overrides={"training": {"epochs": 3}})
        assert "training.epochs: unknown field" in errs

    def test_aligned_needs_inference_round(self):
        _, errs = load_config(preset="desk", overrides={"attack": {"aligned_fraction": 0.2}})
        assert any(e.startswith("attack.inference_rounds:") for e in errs)

    def test_file_overrides_preset(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("preset: setting2\nrounds: 4\n")
        cfg, errs = load_config(f)
        assert not errs and cfg.rounds == 4 and cfg.partition.alpha == 0.1


class TestCli:
    def test_validate_ok(self, tmp_path, capsys):
        f = tmp_path / "ok.yaml"
        f.write_text("preset: desk\n")
        assert cli.main(["validate", str(f)]) == cli.EXIT_OK
        assert "no violations" in capsys.readouterr().out

    def test_validate_reports_every_violation(self, tmp_path, capsys):
        f = tmp_path / "bad.yaml"
        f.write_text("preset: desk\ntraining:\n  clients_per_round: 20\nattack:\n  poison:\n    gamma: 0.1\n")
        assert cli.main(["validate", str(f)]) == cli.EXIT_CONFIG
        err = capsys.readouterr().err
        assert "2 violation(s)" in err
        assert "training.clients_per_round" in err and "attack.poison.gamma" in err

    def test_unreadable_file(self, tmp_path):
        assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG
        assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG

    def test_malformed_yaml(self, tmp_path):
        f = tmp_path / "bad.yaml"
        f.write_text("rounds: [1,\n")
        assert cli.main(["validate", str(f)]) == cli.EXIT_CONFIG

    def test_run_needs_input(self):
        assert cli.main(["run"]) == cli.EXIT_CONFIG

    def test_seed_override_byte_identical(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("preset: desk\nrounds: 3\n")
        for d in ("a", "b", "c"):
            seed = "7" if d != "c" else "8"
            assert cli.main(["run", str(f), "--seed", seed, "--out", str(tmp_path / d)]) == cli.EXIT_OK
        a, b, c = ((tmp_path / d / "main_accuracy.csv").read_bytes() for d in "abc")
        assert a == b and a != c
        assert json.loads((tmp_path / "a" / "manifest.json").read_text())["seed"] == 7

    def test_no_attack(self, tmp_path):
        f = tmp_path / "c.yaml"
        f.write_text("preset: desk\nrounds: 3\nattack:\n  injection_round: 1\n")
        assert cli.main(["run", str(f), "--no-attack", "--out", str(tmp_path / "o")]) == cli.EXIT_OK
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert "attack" not in manifest and manifest["config"]["attack"]["enabled"] is False

    def test_preset_only(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", "--preset", "desk", "--out", str(out)]) == cli.EXIT_OK
        names = sorted(p.name for p in out.iterdir())
        assert names == ["backdoor_success.csv", "main_accuracy.csv", "manifest.json"]

    def test_bad_jobs(self, tmp_path):
        assert cli.main(["run", "--preset", "desk", "--jobs", "0", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
