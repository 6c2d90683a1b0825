"""Latent-space counterfactual analysis of urban LiDAR rasters versus
surface temperature: rasterization, VAE compression, temperature
regression, gradient-parallel latent perturbation, rule-based vegetation
labeling, and OLS hypothesis testing."""

__version__ = "0.1.0"
