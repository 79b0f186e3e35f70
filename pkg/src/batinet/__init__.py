"""Background-aware text-to-image generation and text-guided image manipulation."""

__version__ = "0.1.0"
