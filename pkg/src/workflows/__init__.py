"""
Speculative Verdict Harness - Prompt Workflows

This package contains the reasoning, direct-answer and verdict prompt
templates and the assembly of the verdict request.
"""
