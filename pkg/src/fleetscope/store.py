"""Append-only campaign store: versioned JSON-lines streams plus a manifest.

One directory per campaign. Each stream (records, samples, estimates,
verdicts) is a JSON-lines file with a single writer; appends are one write
call per line, so a crash loses at most the in-flight line. The manifest
tracks schema versions and stage completion markers so a finished stage is
never re-run.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import IO, Iterator

logger = logging.getLogger(__name__)

STREAM_VERSIONS = {
    "records": 1,
    "samples": 1,
    "estimates": 1,
    "verdicts": 1,
}

STAGE_ORDER = ("crawl", "validate", "probe", "estimate", "report")

MANIFEST_NAME = "manifest.json"


class StoreError(Exception):
    """Corrupt store contents (not a trailing partial line)."""


class SchemaMismatch(StoreError):
    """The store was written by a newer schema than this reader supports."""


class StageOrderError(StoreError):
    """Stages must complete in pipeline order."""


class CampaignStore:
    """Directory-backed store for one campaign."""

    def __init__(self, directory: str | Path, create: bool = True):
        self.directory = Path(directory)
        if create:
            self.directory.mkdir(parents=True, exist_ok=True)
        elif not self.directory.is_dir():
            raise StoreError(f"no store at {self.directory}")
        self._manifest_path = self.directory / MANIFEST_NAME
        self._writers: dict[str, IO[str]] = {}
        self._lock = threading.Lock()
        if not self._manifest_path.exists():
            self._write_manifest({"manifest_version": 1, "streams": {}, "stages": {}})

    # -- manifest ---------------------------------------------------------

    def _read_manifest(self) -> dict:
        return json.loads(self._manifest_path.read_text())

    def _write_manifest(self, manifest: dict) -> None:
        tmp = self._manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        tmp.replace(self._manifest_path)

    def stream_version(self, stream: str) -> int | None:
        return self._read_manifest()["streams"].get(stream)

    def stage_done(self, stage: str) -> bool:
        return bool(self._read_manifest()["stages"].get(stage, {}).get("done"))

    def mark_stage_done(self, stage: str) -> None:
        """Record stage completion; earlier pipeline stages must be done."""
        if stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {stage!r}")
        manifest = self._read_manifest()
        for earlier in STAGE_ORDER[: STAGE_ORDER.index(stage)]:
            if not manifest["stages"].get(earlier, {}).get("done"):
                raise StageOrderError(f"stage {stage!r} before {earlier!r} completed")
        manifest["stages"][stage] = {"done": True}
        self._write_manifest(manifest)

    # -- streams ----------------------------------------------------------

    def stream_path(self, stream: str) -> Path:
        if stream not in STREAM_VERSIONS:
            raise ValueError(f"unknown stream {stream!r}")
        return self.directory / f"{stream}.jsonl"

    def append(self, stream: str, obj: dict) -> None:
        """Append one record; atomic at line granularity."""
        path = self.stream_path(stream)
        with self._lock:
            writer = self._writers.get(stream)
            if writer is None:
                manifest = self._read_manifest()
                recorded = manifest["streams"].get(stream)
                if recorded is None:
                    manifest["streams"][stream] = STREAM_VERSIONS[stream]
                    self._write_manifest(manifest)
                elif recorded > STREAM_VERSIONS[stream]:
                    raise SchemaMismatch(
                        f"{stream} is v{recorded}, this writer supports v{STREAM_VERSIONS[stream]}"
                    )
                writer = open(path, "a")
                self._writers[stream] = writer
            writer.write(json.dumps(obj, separators=(",", ":")) + "\n")
            writer.flush()

    def scan(self, stream: str) -> Iterator[dict]:
        """Yield records in append order.

        A corrupt trailing partial line (in-flight during a crash) is
        tolerated and logged; corruption elsewhere raises ``StoreError``.
        """
        recorded = self.stream_version(stream)
        if recorded is not None and recorded > STREAM_VERSIONS[stream]:
            raise SchemaMismatch(
                f"{stream} is v{recorded}, this reader supports v{STREAM_VERSIONS[stream]}"
            )
        path = self.stream_path(stream)
        if not path.exists():
            return
        with open(path) as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for i, line in enumerate(lines):
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                if i == len(lines) - 1:
                    logger.warning("%s: dropping corrupt trailing line", path.name)
                    return
                raise StoreError(f"{path.name}: corrupt line {i + 1}") from exc

    def close(self) -> None:
        with self._lock:
            for writer in self._writers.values():
                writer.close()
            self._writers.clear()

    def __enter__(self) -> "CampaignStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
