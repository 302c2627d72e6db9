"""
Speculative Verdict Harness

Orchestration and evaluation of the two-round draft-then-verdict protocol
over OpenAI-compatible vision-language endpoints.
"""
