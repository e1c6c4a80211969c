"""Multi-candidate ASR error correction: alignment, duration labels, noising, model and baselines."""

__version__ = "0.1.0"
