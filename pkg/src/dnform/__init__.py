"""Direct normal form reduced-order models for geometrically nonlinear structures."""

__version__ = "0.1.0"
