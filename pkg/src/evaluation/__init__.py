"""
Speculative Verdict Harness - Evaluation

Benchmark metrics, run reports, recovery analysis and cost accounting.
"""
