"""Blind spatial image watermarking with receptive-field-sized tiled watermarks."""

__version__ = "0.1.0"
