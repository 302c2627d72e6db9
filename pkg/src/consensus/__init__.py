"""Consensus scoring and expert selection."""
