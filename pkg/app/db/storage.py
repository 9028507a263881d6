"""
File persistence: the binary field snapshot codec and the append-only JSON-lines manifest.

Snapshot layout (little-endian): 8-byte magic, u16 version, u16 tag, 4 pad bytes, u32 n,
f64 L, then n*n complex values as interleaved f64 (re, im) pairs in row-major order.
"""
import csv
import hashlib
import json
import logging
import os
import struct
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.errors import UsageError
from app.models.models import GridSpec, ManifestEntry, RunManifest
from app.services.spectral_grid import Field, PHYSICAL, SPECTRAL

# Configure logging
logger = logging.getLogger(__name__)

MAGIC = b"SNLSFLD\x00"
VERSION = 1
HEADER = struct.Struct("<8sHH4x")
GRID = struct.Struct("<Id")
TAGS = {PHYSICAL: 0, SPECTRAL: 1}
MANIFEST_NAME = "manifest.jsonl"


def encode_field(f: Field) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, TAGS[f.tag])
    grid = GRID.pack(f.grid.points_per_side, f.grid.box_length)
    return header + grid + np.ascontiguousarray(f.values, dtype="<c16").tobytes()


def decode_field(payload: bytes) -> Field:
    if len(payload) < HEADER.size + GRID.size:
        raise UsageError("snapshot is truncated")
    magic, version, tag_code = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise UsageError("not a field snapshot (bad magic)")
    if version != VERSION:
        raise UsageError(f"unsupported snapshot version {version}")
    n, box_length = GRID.unpack_from(payload, HEADER.size)
    body = payload[HEADER.size + GRID.size:]
    if len(body) != 16 * n * n:
        raise UsageError(f"snapshot body has {len(body)} bytes, expected {16 * n * n}")
    tag = {code: name for name, code in TAGS.items()}.get(tag_code)
    if tag is None:
        raise UsageError(f"unknown snapshot tag code {tag_code}")
    values = np.frombuffer(body, dtype="<c16").reshape(n, n)
    return Field(GridSpec(box_length=box_length, points_per_side=n), values, tag)


def sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_snapshot(path: Path, f: Field) -> str:
    """Write a snapshot and return its sha256."""
    payload = encode_field(f)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return sha256_bytes(payload)


def read_snapshot(path: Path) -> Field:
    return decode_field(Path(path).read_bytes())


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Write a CSV table with repr-exact floats and return its sha256."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return file_sha256(path)


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def task_key(kind: str, payload: Dict[str, object]) -> str:
    """Stable identifier of a task from its kind and JSON-serializable inputs."""
    canonical = json.dumps({"kind": kind, **payload}, sort_keys=True, default=str)
    return sha256_bytes(canonical.encode("utf-8"))[:16]


class ManifestStore:
    """
    Append-only JSON-lines record of completed tasks under one output directory.

    File paths in entries are relative to the output directory.
    """

    def __init__(self, out_dir: str):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / MANIFEST_NAME

    def entries(self) -> List[ManifestEntry]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as handle:
            return [ManifestEntry.model_validate_json(line) for line in handle if line.strip()]

    def append(self, entry: ManifestEntry) -> ManifestEntry:
        if not entry.created_at:
            entry = entry.model_copy(update={"created_at": datetime.now(timezone.utc).isoformat()})
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(entry.model_dump_json() + "\n")
        logger.info(f"Recorded task {entry.task_id} ({entry.kind}) with {len(entry.files)} files")
        return entry

    def verify(self, entry: ManifestEntry) -> bool:
        """True when every file of the entry exists and matches its hash."""
        for rel, digest in entry.files.items():
            path = self.root / rel
            if not path.is_file() or file_sha256(path) != digest:
                return False
        return True

    def completed(self, task_id: str) -> Optional[ManifestEntry]:
        """Latest verified entry for a task, if any."""
        for entry in reversed(self.entries()):
            if entry.task_id == task_id:
                if self.verify(entry):
                    return entry
                logger.warning(f"Task {task_id} has a manifest entry whose files fail the hash check")
                return None
        return None

    def write_run(self, run: RunManifest) -> Path:
        """Write the provenance record of one command invocation under runs/."""
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        path = self.root / "runs" / f"{run.command}_{stamp}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(run.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Run record for {run.command} with {len(run.entries)} entries written to {path}")
        return path

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def relative(self, path: Path) -> str:
        return os.path.relpath(path, self.root)
