"""Append-only on-disk event store.

Layout: ``<root>/<owner>__<repo>/<YYYY-MM>.events``, one file per
repository and month.  Each file starts with an 8-byte magic header
(``OSHEVT`` + two-digit format version) followed by length-prefixed
records: a big-endian uint32 byte length, then the record as canonical
UTF-8 JSON (sorted keys).  Appends are serialised per partition by the
caller; readers are always safe.

An optional dedup key -- ``(repo_id, created_at, actor, event_type,
payload hash)`` -- makes re-ingesting the same archive idempotent.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .events import EventRecord, EventType

MAGIC = b"OSHEVT01"
_LEN = struct.Struct(">I")


class StoreError(IOError):
    pass


class StoreWriteError(StoreError):
    """Raised when an append fails part-way; carries the partial count."""

    def __init__(self, message: str, partial_count: int):
        super().__init__(message)
        self.partial_count = partial_count


@dataclass
class AppendReceipt:
    count: int = 0
    duplicates_skipped: int = 0
    #: partition name -> (start byte, end byte) of the appended range
    byte_ranges: dict[str, tuple[int, int]] = field(default_factory=dict)


def _month_key(created_at: int) -> str:
    dt = datetime.fromtimestamp(created_at, tz=timezone.utc)
    return f"{dt.year:04d}-{dt.month:02d}"


def _partition_dir_name(repo_id: str) -> str:
    return repo_id.replace("/", "__")


def _record_to_json(record: EventRecord) -> bytes:
    doc = {
        "repo_id": record.repo_id,
        "event_type": record.event_type.value,
        "actor": record.actor,
        "created_at": record.created_at,
        "tz_offset": record.tz_offset,
        "action": record.action,
        "texts": record.texts,
        "counts": record.counts,
        "number": record.number,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _record_from_json(blob: bytes) -> EventRecord:
    doc = json.loads(blob.decode("utf-8"))
    return EventRecord(
        repo_id=doc["repo_id"],
        event_type=EventType(doc["event_type"]),
        actor=doc["actor"],
        created_at=doc["created_at"],
        tz_offset=doc.get("tz_offset"),
        action=doc.get("action"),
        texts=doc.get("texts") or [],
        counts=doc.get("counts"),
        number=doc.get("number"),
    )


def dedup_key(record: EventRecord) -> str:
    payload = json.dumps(
        [record.action, record.texts, record.counts, record.number],
        sort_keys=True,
        separators=(",", ":"),
    )
    payload_hash = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    raw = "\x00".join(
        [
            record.repo_id,
            str(record.created_at),
            record.actor,
            record.event_type.value,
            payload_hash,
        ]
    )
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


class EventStore:
    """Partitioned append-only store rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    # -- write ---------------------------------------------------------

    def append(self, events: Iterable[EventRecord], dedup: bool = False) -> AppendReceipt:
        """Durably append events, partitioned by (repo, month).

        With ``dedup`` enabled, records whose dedup key already exists in
        the target partition are skipped and counted in the receipt.
        """
        receipt = AppendReceipt()
        by_partition: dict[tuple[str, str], list[EventRecord]] = {}
        for event in events:
            by_partition.setdefault((event.repo_id, _month_key(event.created_at)), []).append(event)

        for (repo_id, month), batch in sorted(by_partition.items()):
            path = self.root / _partition_dir_name(repo_id) / f"{month}.events"
            path.parent.mkdir(parents=True, exist_ok=True)
            seen: set[str] = set()
            if dedup and path.exists():
                seen = {dedup_key(r) for r in self._read_partition(path)}
            try:
                with open(path, "ab") as handle:
                    if handle.tell() == 0:
                        handle.write(MAGIC)
                    start = handle.tell()
                    for record in batch:
                        if dedup:
                            key = dedup_key(record)
                            if key in seen:
                                receipt.duplicates_skipped += 1
                                continue
                            seen.add(key)
                        blob = _record_to_json(record)
                        handle.write(_LEN.pack(len(blob)))
                        handle.write(blob)
                        receipt.count += 1
                    handle.flush()
                    end = handle.tell()
            except OSError as exc:
                raise StoreWriteError(f"append to {path} failed: {exc}", receipt.count) from exc
            receipt.byte_ranges[f"{_partition_dir_name(repo_id)}/{month}"] = (start, end)
        return receipt

    # -- read ----------------------------------------------------------

    @staticmethod
    def _read_partition(path: Path) -> Iterator[EventRecord]:
        with open(path, "rb") as handle:
            magic = handle.read(len(MAGIC))
            if magic != MAGIC:
                raise StoreError(f"{path}: bad magic header {magic!r}")
            while True:
                head = handle.read(_LEN.size)
                if not head:
                    break
                if len(head) < _LEN.size:
                    raise StoreError(f"{path}: truncated length prefix")
                (length,) = _LEN.unpack(head)
                blob = handle.read(length)
                if len(blob) < length:
                    raise StoreError(f"{path}: truncated record")
                yield _record_from_json(blob)

    def read(self, repo_id: str) -> list[EventRecord]:
        """All events for one repository, in append order per month."""
        repo_dir = self.root / _partition_dir_name(repo_id)
        records: list[EventRecord] = []
        if not repo_dir.is_dir():
            return records
        for path in sorted(repo_dir.glob("*.events")):
            records.extend(self._read_partition(path))
        return records

    def iter_repo_ids(self) -> Iterator[str]:
        for entry in sorted(self.root.iterdir()):
            if entry.is_dir() and "__" in entry.name:
                yield entry.name.replace("__", "/", 1)

    def has_history(self, repo_id: str) -> bool:
        from .events import CONTRIBUTION_TYPES

        return any(e.event_type in CONTRIBUTION_TYPES for e in self.read(repo_id))
