"""Logging setup and run metrics."""
