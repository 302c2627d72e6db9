"""
Speculative Verdict Harness - Exceptions

Error hierarchy shared by the pipeline, the model connectors and the harness.
Everything raised on purpose derives from SpeculativeVerdictError so that
run_sample can turn it into a failed outcome instead of aborting a batch.
"""

from typing import List, Optional


class SpeculativeVerdictError(Exception):
    """Base class for all harness errors"""


class ConfigError(SpeculativeVerdictError):
    """Invalid or unreadable run configuration"""


# Model client errors

class ModelClientError(SpeculativeVerdictError):
    """Base class for endpoint communication errors"""

    def __init__(self, message: str, model: Optional[str] = None):
        super().__init__(message)
        self.model = model


class EndpointUnavailable(ModelClientError):
    """Endpoint unreachable after all retries"""


class MalformedResponse(ModelClientError):
    """Response is missing required fields"""


class RequestRejected(ModelClientError):
    """Endpoint rejected the request with a non-retryable status"""

    def __init__(self, message: str, model: Optional[str] = None, status: int = 400):
        super().__init__(message, model)
        self.status = status


class ScoringUnsupported(ModelClientError):
    """Model has no scoring backend configured"""


class EmptyAnswer(ModelClientError):
    """Answer text to score is empty"""


# Consensus errors

class ConsensusError(SpeculativeVerdictError):
    """Base class for consensus scoring errors"""


class MissingScore(ConsensusError):
    """A required NLL pair is absent"""

    def __init__(self, scorer: int, candidate: int):
        super().__init__(f"missing NLL score for scorer {scorer} on candidate {candidate}")
        self.scorer = scorer
        self.candidate = candidate


class NoValidCandidates(ConsensusError):
    """No candidate carries an extracted answer"""


class MissingReference(ConsensusError):
    """best_reference selection without a usable reference expert"""


# Pipeline errors

class PipelineError(SpeculativeVerdictError):
    """Base class for per-sample pipeline failures"""


class AllDraftsFailed(PipelineError):
    """Every draft candidate is invalid"""


class AllExpertsFailed(PipelineError):
    """No selected expert produced a reasoning path"""


class NoPaths(PipelineError):
    """Verdict prompt requested without any path"""


# Evaluation errors

class EmptyRun(SpeculativeVerdictError):
    """Nothing to evaluate"""


# Harness errors

class ManifestError(SpeculativeVerdictError):
    """Base class for manifest ingestion errors"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line
        self.all_errors: List["ManifestError"] = []


class ParseError(ManifestError):
    """Manifest line is not a valid entry"""


class MissingImage(ManifestError):
    """Manifest entry references an image that does not exist"""

    def __init__(self, sample_id: str, path: str, line: Optional[int] = None):
        super().__init__(f"line {line}: image for '{sample_id}' not found: {path}", line)
        self.sample_id = sample_id


class DuplicateId(ManifestError):
    """Manifest entry id already used"""

    def __init__(self, sample_id: str, line: Optional[int] = None):
        super().__init__(f"line {line}: duplicate id '{sample_id}'", line)
        self.sample_id = sample_id


class StoreCorrupted(SpeculativeVerdictError):
    """Run directory contents cannot be parsed"""


class ScenarioError(SpeculativeVerdictError):
    """Scenario file failed validation"""


class PortInUse(SpeculativeVerdictError):
    """Mock server port already bound"""
