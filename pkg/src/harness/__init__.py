"""Manifests, run persistence and batch execution."""
