"""Test scenarios."""
