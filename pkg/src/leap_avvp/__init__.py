"""Label-embedding projection decoding for weakly-supervised audio-visual video parsing."""

__version__ = "0.1.0"
