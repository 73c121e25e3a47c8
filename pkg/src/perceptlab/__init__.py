"""perceptlab: a desk-scale diffusion-perception laboratory."""

__version__ = "0.1.0"
