"""Embodied active defense against adversarial patches, at desk scale."""

__version__ = "0.1.0"
