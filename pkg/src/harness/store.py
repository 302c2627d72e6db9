"""
Speculative Verdict Harness - Run Store

Run directory layout::

    <run>/candidates.jsonl scores.jsonl selection.jsonl paths.jsonl verdict.jsonl
    <run>/outcomes.jsonl   one SampleOutcome per line
    <run>/metadata.json    config, manifest and timestamps
    <run>/timings.jsonl    per-call latency
    <run>/reports/         metrics, recovery and cost reports
    <run>/cache/           content-addressed request cache (diskcache)

Stage files are append-only while a batch runs and are rewritten in manifest
order, one record per sample, when it finishes.
"""

import asyncio
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Union

import aiofiles
import diskcache

from ..core.exceptions import StoreCorrupted
from ..core.models import OutcomeStatus, SampleOutcome

logger = logging.getLogger(__name__)

STAGES = ("candidates", "scores", "selection", "paths", "verdict")
OUTCOMES = "outcomes"
METADATA_FILE = "metadata.json"
TIMINGS_FILE = "timings.jsonl"
REPORTS_DIR = "reports"
CACHE_DIR = "cache"
STORE_SCHEMA_VERSION = 1


def dump_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, allow_nan=False) + "\n"


class RequestCache:
    """Disk-backed request cache shared by every connector of a run"""

    def __init__(self, cache_dir: Union[str, Path]):
        os.makedirs(cache_dir, exist_ok=True)
        self.cache = diskcache.Cache(str(cache_dir))

    def get(self, key: str) -> Optional[Dict[str, Any]]:
        """Retrieve a completed response by key"""
        return self.cache.get(key)

    def set(self, key: str, value: Dict[str, Any]) -> None:
        """Store a completed response"""
        self.cache[key] = value

    def __len__(self) -> int:
        return len(self.cache)

    def close(self):
        self.cache.close()


class RunStore:
    """Persistence for one run directory"""

    def __init__(self, run_dir: Union[str, Path], cache_dir: Optional[Union[str, Path]] = None):
        self.run_dir = Path(run_dir)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else self.run_dir / CACHE_DIR
        self._lock = asyncio.Lock()
        self._timings: List[Dict[str, Any]] = []
        self._cache: Optional[RequestCache] = None

    # Layout

    def stage_path(self, stage: str) -> Path:
        return self.run_dir / f"{stage}.jsonl"

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / REPORTS_DIR

    def is_empty(self) -> bool:
        return not self.run_dir.exists() or not any(self.run_dir.iterdir())

    def prepare(self):
        """Create the directory and drop any line left half-written by a crash"""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for stage in (*STAGES, OUTCOMES):
            self._repair(self.stage_path(stage))

    def open_cache(self) -> RequestCache:
        if self._cache is None:
            self._cache = RequestCache(self.cache_dir)
        return self._cache

    def close(self):
        if self._cache is not None:
            self._cache.close()
            self._cache = None

    # Reading

    def _parse(self, path: Path) -> tuple:
        """(records, truncated tail) of a JSON-lines file"""
        if not path.exists():
            return [], False
        text = path.read_text(encoding="utf-8")
        lines = text.split("\n")
        records = []
        for index, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                last = index == len(lines) - 1
                if last and not text.endswith("\n"):
                    return records, True
                raise StoreCorrupted(f"{path}: line {index + 1} is not valid JSON ({e.msg})") from e
        return records, False

    def _repair(self, path: Path):
        records, truncated = self._parse(path)
        if truncated:
            logger.warning(f"Dropping truncated last line of {path}")
            self._rewrite(path, records)

    def read_stage(self, stage: str) -> List[Dict[str, Any]]:
        records, truncated = self._parse(self.stage_path(stage))
        if truncated:
            logger.warning(f"Ignoring truncated last line of {self.stage_path(stage)}")
        return records

    def load_outcomes(self, order: Optional[Sequence[str]] = None) -> List[SampleOutcome]:
        """Latest outcome per sample, in the given order when one is supplied"""
        latest: Dict[str, Dict[str, Any]] = {}
        for record in self.read_stage(OUTCOMES):
            latest[record["sample_id"]] = record
        ids = list(order) if order is not None else sorted(latest)
        try:
            return [SampleOutcome.from_dict(latest[i]) for i in ids if i in latest]
        except (KeyError, ValueError, TypeError) as e:
            raise StoreCorrupted(f"{self.stage_path(OUTCOMES)}: unreadable outcome ({e})") from e

    def completed_ids(self) -> Set[str]:
        """Samples whose latest outcome completed; failed samples are retried"""
        latest: Dict[str, str] = {}
        for record in self.read_stage(OUTCOMES):
            latest[record["sample_id"]] = record.get("status", OutcomeStatus.COMPLETED.value)
        return {sample_id for sample_id, status in latest.items() if status == OutcomeStatus.COMPLETED.value}

    # Writing

    async def _append(self, path: Path, record: Dict[str, Any]):
        line = dump_line(record)
        async with self._lock:
            async with aiofiles.open(path, "a", encoding="utf-8") as f:
                await f.write(line)

    async def write_stage(self, stage: str, sample_id: str, payload: Dict[str, Any]) -> None:
        """Append one completed stage record"""
        await self._append(self.stage_path(stage), {"sample_id": sample_id, **payload})

    async def write_outcome(self, outcome: SampleOutcome):
        await self._append(self.stage_path(OUTCOMES), outcome.to_dict())

    def record_timing(self, entry: Dict[str, Any]):
        self._timings.append(entry)

    def flush_timings(self):
        if not self._timings:
            return
        with open(self.run_dir / TIMINGS_FILE, "a", encoding="utf-8") as f:
            f.writelines(dump_line(entry) for entry in self._timings)
        self._timings.clear()

    def _rewrite(self, path: Path, records: Iterable[Dict[str, Any]]):
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            f.writelines(dump_line(record) for record in records)
        os.replace(tmp, path)

    def finalize(self, order: Sequence[str]):
        """Rewrite every stage file with the latest record per sample, in manifest order"""
        position = {sample_id: index for index, sample_id in enumerate(order)}
        for stage in (*STAGES, OUTCOMES):
            path = self.stage_path(stage)
            if not path.exists():
                continue
            latest: Dict[str, Dict[str, Any]] = {}
            for record in self.read_stage(stage):
                latest[record["sample_id"]] = record
            ordered = sorted(latest.values(), key=lambda r: (position.get(r["sample_id"], len(position)), r["sample_id"]))
            self._rewrite(path, ordered)
        logger.debug(f"Finalized stage files in {self.run_dir}")

    # Metadata and reports

    def read_metadata(self) -> Dict[str, Any]:
        path = self.run_dir / METADATA_FILE
        if not path.exists():
            return {}
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise StoreCorrupted(f"{path} is not valid JSON ({e.msg})") from e

    def update_metadata(self, **fields: Any):
        metadata = self.read_metadata()
        metadata.setdefault("schema_version", STORE_SCHEMA_VERSION)
        metadata.update(fields)
        path = self.run_dir / METADATA_FILE
        path.write_text(json.dumps(metadata, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    def write_report(self, name: str, data: Dict[str, Any], text: Optional[str] = None):
        self.reports_dir.mkdir(parents=True, exist_ok=True)
        (self.reports_dir / f"{name}.json").write_text(
            json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        if text is not None:
            (self.reports_dir / f"{name}.txt").write_text(text + "\n", encoding="utf-8")
