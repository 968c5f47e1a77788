"""Span-selection semantic role labeling: encoder, span scorer, decoders, ensemble."""

__version__ = "0.1.0"
