"""One-stream video WGAN-GP on a small numpy autodiff engine."""

__version__ = "0.1.0"
