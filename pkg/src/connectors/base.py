"""
Base Model Connector Interface

This module defines the interface every model endpoint connector implements
so the pipeline can generate text and score answers without knowing the
wire protocol behind a pool member.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Any, Optional, List
from enum import Enum
import logging

from ..core.models import GenerationRecord, NllScore
from .images import ImagePayload

logger = logging.getLogger(__name__)


class ConnectorStatus(Enum):
    """Connector status enumeration"""
    DISCONNECTED = "disconnected"
    CONNECTING = "connecting"
    CONNECTED = "connected"
    ERROR = "error"


@dataclass
class PromptParts:
    """System text, user text and images of one request"""
    user: str
    system: Optional[str] = None
    images: List[ImagePayload] = field(default_factory=list)


@dataclass
class GenerationParams:
    """Sampling parameters"""
    max_tokens: int
    temperature: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"max_tokens": self.max_tokens, "temperature": self.temperature}


class BaseModelConnector(ABC):
    """Base connector interface for model endpoints"""

    def __init__(self, name: str):
        self.name = name
        self.status = ConnectorStatus.DISCONNECTED
        self.last_error: Optional[str] = None

    @abstractmethod
    async def connect(self, **kwargs) -> bool:
        """Open the transport to the endpoint"""
        pass

    @abstractmethod
    async def disconnect(self) -> bool:
        """Release the transport"""
        pass

    @abstractmethod
    async def is_connected(self) -> bool:
        """Check if the transport is open"""
        pass

    @abstractmethod
    async def generate(self, prompt: PromptParts, params: GenerationParams, stage: str = "") -> GenerationRecord:
        """Run one generation and return its ledger record"""
        pass

    @abstractmethod
    async def score_answer_nll(
        self,
        image: ImagePayload,
        question: str,
        answer_text: str,
        *,
        scorer_index: int,
        candidate_index: int,
    ) -> NllScore:
        """Mean NLL of answer_text conditioned on (image, question)"""
        pass

    # Common utility methods
    def get_status(self) -> Dict[str, Any]:
        """Get connector status"""
        return {
            "name": self.name,
            "status": self.status.value,
            "connected": self.status == ConnectorStatus.CONNECTED,
            "last_error": self.last_error
        }

    def set_error(self, error_message: str):
        """Record the last failure without changing the connection state"""
        self.last_error = error_message
        logger.warning(f"{self.name} connector error: {error_message}")

    async def close(self):
        """Cleanup and close connector"""
        if self.status in (ConnectorStatus.CONNECTED, ConnectorStatus.ERROR):
            await self.disconnect()
