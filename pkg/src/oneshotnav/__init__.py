"""One-shot visual path navigation: Siamese sequence matching over a synthetic driving world."""

__version__ = "0.1.0"
