"""Contrastive code-text training for function-level vulnerability
detection, with code-only inference."""

__version__ = "0.1.0"
