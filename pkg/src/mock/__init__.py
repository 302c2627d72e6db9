"""Scenario-driven mock model server."""
