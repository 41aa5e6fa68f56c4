"""Time-series imaging, diffusion and WGAN-GP beat generators, and their evaluation."""

__version__ = "0.1.0"
