"""Sharded positional full-text index and audit toolkit for text corpora."""

__version__ = "0.1.0"
