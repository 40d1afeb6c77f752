"""Crash-safe key-record store: append-only journal plus compacted snapshot.

Every mutation is one journal line ``<crc32>\\t<json>\\n`` made durable with
fsync before it is applied in memory; the journal is never truncated except
to drop a torn tail, so it doubles as the audit log. Snapshots are written
to a temp file and renamed into place, and record the journal sequence
number they include.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

from ..errors import NotFound, StoreUnavailable
from ..lifecycle import KeyRecord

log = logging.getLogger(__name__)

JOURNAL = "journal.log"
SNAPSHOT = "snapshot.json"

AUDITED_EVENTS = ("issued", "refreshed", "swept")


@dataclass(frozen=True)
class AuditEvent:
    seq: int
    event: str
    key_id: str
    at: int


def _encode_line(entry: dict) -> bytes:
    body = json.dumps(entry, sort_keys=True, separators=(",", ":")).encode()
    return b"%08x\t%s\n" % (zlib.crc32(body), body)


def _decode_line(line: bytes) -> Optional[dict]:
    if not line.endswith(b"\n"):
        return None
    crc, sep, body = line[:-1].partition(b"\t")
    if not sep or len(crc) != 8:
        return None
    try:
        if int(crc, 16) != zlib.crc32(body):
            return None
        return json.loads(body)
    except ValueError:
        return None


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class JournalStore:
    def __init__(
        self,
        directory: str | Path,
        snapshot_every: int = 64,
        clock: Callable[[], float] = time.time,
    ):
        self.clock = clock
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.snapshot_every = snapshot_every
        self._lock = threading.Lock()
        self._records: dict[str, KeyRecord] = {}
        self._events: list[AuditEvent] = []
        self._seq = 0
        self._snapshot_seq = 0
        self.discarded_tail = 0
        self._closed = False
        self._recover()
        self._fh = open(self.dir / JOURNAL, "ab")

    # recovery

    def _recover(self) -> None:
        tmp = self.dir / (SNAPSHOT + ".tmp")
        if tmp.exists():
            tmp.unlink()
        snap = self._load_snapshot()
        if snap is not None:
            self._snapshot_seq = snap["seq"]
            self._records = {
                k: KeyRecord.from_dict(v) for k, v in snap["records"].items()
            }
        journal = self.dir / JOURNAL
        if not journal.exists():
            return
        good_end = 0
        replayed: dict[str, KeyRecord] = {}
        with open(journal, "rb") as fh:
            for line in iter(fh.readline, b""):
                entry = _decode_line(line)
                if entry is None:
                    break
                good_end += len(line)
                self._seq = entry["seq"]
                self._events.append(
                    AuditEvent(entry["seq"], entry["event"], entry["record"]["key_id"], entry["at"])
                )
                if entry["seq"] > self._snapshot_seq:
                    replayed[entry["record"]["key_id"]] = KeyRecord.from_dict(entry["record"])
        size = journal.stat().st_size
        if good_end < size:
            self.discarded_tail = size - good_end
            log.warning("discarding %d torn bytes at journal tail", self.discarded_tail)
            with open(journal, "r+b") as fh:
                fh.truncate(good_end)
                fh.flush()
                os.fsync(fh.fileno())
        if self._seq < self._snapshot_seq:
            # a snapshot can never be ahead of the journal it summarizes
            raise StoreUnavailable("snapshot is ahead of the journal")
        self._records.update(replayed)

    def _load_snapshot(self) -> Optional[dict]:
        path = self.dir / SNAPSHOT
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_bytes())
            body = json.dumps(doc["records"], sort_keys=True, separators=(",", ":")).encode()
            if zlib.crc32(body) != doc["crc"]:
                raise ValueError("checksum mismatch")
            return doc
        except (ValueError, KeyError) as exc:
            log.warning("ignoring unreadable snapshot: %s", exc)
            return None

    # writes

    def _append(self, line: bytes) -> None:
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def _write_snapshot(self, payload: bytes) -> None:
        tmp = self.dir / (SNAPSHOT + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.dir / SNAPSHOT)
        _fsync_dir(self.dir)

    def _rollback(self, offset: int) -> None:
        # drop a partial line so later appends stay parseable
        try:
            self._fh.truncate(offset)
            self._fh.seek(offset)
            self._fh.flush()
            os.fsync(self._fh.fileno())
        except OSError:
            log.error("cannot roll back journal; store closed until restart")
            self._fh.close()
            self._closed = True

    def compact(self) -> None:
        with self._lock:
            self._compact_locked()

    def _compact_locked(self) -> None:
        records = {k: v.to_dict() for k, v in sorted(self._records.items())}
        body = json.dumps(records, sort_keys=True, separators=(",", ":")).encode()
        doc = {"seq": self._seq, "crc": zlib.crc32(body), "records": records}
        self._write_snapshot(json.dumps(doc, sort_keys=True).encode())
        self._snapshot_seq = self._seq

    def commit(self, record: KeyRecord, event: str, at: Optional[int] = None) -> None:
        if event not in AUDITED_EVENTS:
            raise ValueError(f"unknown event {event!r}")
        if at is None:
            at = int(self.clock())
        with self._lock:
            self._check()
            seq = self._seq + 1
            line = _encode_line({"seq": seq, "event": event, "at": at, "record": record.to_dict()})
            start = self._fh.tell()
            try:
                self._append(line)
            except OSError as exc:
                self._rollback(start)
                raise StoreUnavailable(f"journal write failed: {exc}") from exc
            self._seq = seq
            self._records[record.key_id] = record
            self._events.append(AuditEvent(seq, event, record.key_id, at))
            if seq - self._snapshot_seq >= self.snapshot_every:
                try:
                    self._compact_locked()
                except OSError as exc:
                    # the journal line is already durable; retry next time
                    log.warning("snapshot failed: %s", exc)

    # reads

    def _check(self) -> None:
        if self._closed:
            raise StoreUnavailable("store is closed")

    def get(self, key_id: str) -> KeyRecord:
        self._check()
        try:
            return self._records[key_id]
        except KeyError:
            raise NotFound(f"no key {key_id!r}") from None

    def records(self) -> list[KeyRecord]:
        self._check()
        with self._lock:
            return list(self._records.values())

    def audit_events(self) -> list[AuditEvent]:
        with self._lock:
            return list(self._events)

    @property
    def mutation_count(self) -> int:
        return self._seq

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[KeyRecord]:
        return iter(self.records())

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._fh.close()
                self._closed = True
