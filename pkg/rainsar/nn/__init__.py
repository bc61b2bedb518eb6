"""Minimal reverse-mode tensor engine and the rain estimation networks."""
