"""l1-penalized quantile regression for high-dimensional sparse models."""
