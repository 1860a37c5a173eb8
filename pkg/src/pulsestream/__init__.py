"""pulsestream: desk-scale political sentiment pipeline over video metadata."""

__version__ = "0.1.0"
