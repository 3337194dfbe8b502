"""Training-free concept blending on analytic Gaussian-mixture diffusion models."""

__version__ = "0.1.0"
