"""Adversarial learning with parameterized semantics transformations."""

__version__ = "0.1.0"
