"""Hierarchical graph prosody encoder for long-form TTS, trained at desk scale."""

__version__ = "0.1.0"
