"""Offline exporter: speech-model hidden states -> CMFEAT feature files."""

__version__ = "0.1.0"
