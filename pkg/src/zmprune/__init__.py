"""Pseudo-Zernike interval prefiltering for content-based image retrieval."""

__version__ = "0.1.0"
