"""Per-image blind super-resolution with reference-guided degradation estimation."""

__version__ = "0.1.0"
