"""Two-stage conditional adversarial autoencoder for cell and subcellular
structure images."""

__version__ = "0.1.0"
