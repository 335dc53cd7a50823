"""Audio-driven emotional talking-head pipeline with a synthetic verification oracle."""

__version__ = "0.1.0"
