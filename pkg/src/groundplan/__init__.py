"""Video-guided latent collocation planning on toy environments."""

__version__ = "0.1.0"
