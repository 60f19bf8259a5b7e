"""ofbmlab: operator fractional Brownian motion limits of nonlinear functionals of Gaussian sequences."""

__version__ = "0.1.0"
