"""
Speculative Verdict Harness - Model Connectors

This package contains connectors for OpenAI-compatible model endpoints,
plus image loading and token pricing helpers.
"""
