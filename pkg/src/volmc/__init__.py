"""Volumetric Monte Carlo rendering with control-variate radiance caching,
occlusion-aware vMF importance sampling and material inversion."""

from . import autodiff, brdf, cache, estimator, kernels, optimize, scene, vmf, volume  # noqa: F401

__version__ = "0.1.0"
