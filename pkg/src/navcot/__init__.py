"""Closed-loop vision-and-language navigation harness with constrained chain-of-thought prompting."""

__version__ = "0.1.0"
