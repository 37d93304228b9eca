"""Few-shot neural radiance fields conditioned on Gabor/Zernike moment features."""

__version__ = "0.1.0"
