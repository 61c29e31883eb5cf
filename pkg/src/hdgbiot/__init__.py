"""Hybridized H(div) DG / hybrid-mixed discretization of the three-field Biot model."""

__version__ = "0.1.0"
