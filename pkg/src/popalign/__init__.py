"""Federated-learning simulator for distribution-aligned two-phase backdoor attacks."""

__version__ = "0.1.0"
