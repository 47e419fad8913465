"""Opinionated anchor-utterance detection for code-mixed debate transcripts."""

__version__ = "0.1.0"
