"""Latent Gaussian models with GMRF imputation of missing covariates."""

__version__ = "0.1.0"
