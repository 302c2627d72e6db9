"""
Speculative Verdict Harness - Core

Domain models, answer extraction, configuration, errors and the pipeline.
"""
