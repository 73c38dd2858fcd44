"""progpol: synthesis, evaluation, and verification of programmatic control policies."""

__version__ = "0.1.0"
