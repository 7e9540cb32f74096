"""Training-free layout guidance for a toy attention denoiser."""

__version__ = "0.1.0"
