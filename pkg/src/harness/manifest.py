"""
Manifest ingestion.

A manifest is a JSON-lines file with one sample per line. The benchmark is
declared either by an optional header line ``{"benchmark": "ChartMuseum"}``
or by the caller. Image paths resolve relative to the manifest directory.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, Field, ValidationError

from ..connectors.images import is_remote
from ..core.exceptions import DuplicateId, ManifestError, MissingImage, ParseError
from ..core.models import BenchmarkKind, Sample

logger = logging.getLogger(__name__)


class ManifestEntry(BaseModel):
    """One manifest line"""
    id: str = Field(min_length=1)
    question: str = Field(min_length=1)
    image_path: str = Field(min_length=1)
    aux_image_path: Optional[str] = None
    gold_answers: List[str] = Field(min_length=1)
    question_type: Optional[str] = None


@dataclass
class Manifest:
    """Validated benchmark manifest"""
    benchmark: BenchmarkKind
    entries: List[ManifestEntry]
    root: Path
    path: Optional[Path] = None
    samples: List[Sample] = field(default_factory=list)

    def __post_init__(self):
        if not self.samples:
            self.samples = [self._to_sample(entry) for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, ref: Optional[str]) -> Optional[str]:
        if ref is None or is_remote(ref):
            return ref
        candidate = Path(ref)
        return str(candidate if candidate.is_absolute() else (self.root / candidate))

    def _to_sample(self, entry: ManifestEntry) -> Sample:
        return Sample(
            id=entry.id,
            question=entry.question,
            image=self.resolve(entry.image_path),
            aux_image=self.resolve(entry.aux_image_path),
            gold_answers=list(entry.gold_answers),
            benchmark=self.benchmark,
            question_type=entry.question_type,
        )

    @property
    def ids(self) -> List[str]:
        return [entry.id for entry in self.entries]


def _is_header(data: object) -> bool:
    return isinstance(data, dict) and "benchmark" in data and "id" not in data


def ingest_manifest(path: Union[str, Path], benchmark: Optional[BenchmarkKind] = None) -> Manifest:
    """Parse and validate a manifest; every bad line is logged, the first is raised"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParseError(f"cannot read manifest {path}: {e}") from e

    root = path.parent
    declared: Optional[BenchmarkKind] = None
    entries: List[ManifestEntry] = []
    seen = set()
    errors: List[ManifestError] = []

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            errors.append(ParseError(f"line {line_no}: invalid JSON ({e.msg})", line_no))
            continue

        if _is_header(data) and not entries and declared is None:
            try:
                declared = BenchmarkKind(data["benchmark"])
            except ValueError:
                errors.append(ParseError(f"line {line_no}: unknown benchmark '{data['benchmark']}'", line_no))
            continue

        try:
            entry = ManifestEntry.model_validate(data)
        except ValidationError as e:
            errors.append(ParseError(f"line {line_no}: invalid entry ({e.error_count()} errors): {e}", line_no))
            continue

        if entry.id in seen:
            errors.append(DuplicateId(entry.id, line_no))
            continue
        seen.add(entry.id)

        missing = False
        for ref in (entry.image_path, entry.aux_image_path):
            if ref is None or is_remote(ref):
                continue
            resolved = Path(ref) if Path(ref).is_absolute() else root / ref
            if not resolved.is_file():
                errors.append(MissingImage(entry.id, str(resolved), line_no))
                missing = True
        if not missing:
            entries.append(entry)

    if benchmark is not None and declared is not None and benchmark != declared:
        logger.warning(f"Manifest declares {declared.value}, using {benchmark.value} as requested")
    kind = benchmark or declared
    if kind is None:
        errors.insert(0, ParseError("manifest declares no benchmark and none was given", 1))

    if errors:
        for error in errors:
            logger.error(f"Manifest {path}: {error}")
        first = errors[0]
        first.all_errors = errors
        raise first

    logger.info(f"Loaded {len(entries)} samples ({kind.value}) from {path}")
    return Manifest(benchmark=kind, entries=entries, root=root, path=path)
