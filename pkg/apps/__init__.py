"""difflab: one-dimensional diffusion estimation, testing and pricing."""

__version__ = "0.1.0"
