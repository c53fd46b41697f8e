"""Append-only audit persistence and training-label assembly.

The audit log is the label source of the feedback loop: every confirm or
correct action lands here, and training sets are rebuilt from it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Iterable, Optional

from .types import Corpus, ExceptionType

SOURCES = ("iDQM", "bulk")
ACTIONS = ("correct", "confirm")


@dataclass(frozen=True)
class AuditRecord:
    """A before/after trace of one human decision on one field of one record."""

    audit_id: int  # assigned by the store; -1 before append
    instrument_id: str
    ref_month: str
    field: str
    before: object
    after: object
    exception_type: ExceptionType
    source: str  # "iDQM" | "bulk"
    actor: str
    timestamp: str
    action: str  # "correct" | "confirm"

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == "correct" and self.before == self.after:
            raise ValueError("correct action requires before != after")
        if self.action == "confirm" and self.before != self.after:
            raise ValueError("confirm action requires before == after")

    def to_json(self) -> str:
        d = asdict(self)
        d["exception_type"] = self.exception_type.value
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(payload: str) -> "AuditRecord":
        d = json.loads(payload)
        d["exception_type"] = ExceptionType(d["exception_type"])
        return AuditRecord(**d)


class AuditStore:
    """Single-writer append-only audit log backed by a framed JSON-lines file.

    Each line is ``<byte-length> <json>``; the length prefix lets a reader
    detect a torn final record after a crash. On open, any incomplete tail
    is truncated so subsequent appends produce a clean file.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._records: list[AuditRecord] = []
        good_bytes = 0
        if self.path.exists():
            raw = self.path.read_bytes()
            offset = 0
            while offset < len(raw):
                nl = raw.find(b"\n", offset)
                if nl < 0:
                    break  # no newline: torn tail
                line = raw[offset:nl]
                try:
                    prefix, payload = line.split(b" ", 1)
                    if int(prefix) != len(payload):
                        break
                    rec = AuditRecord.from_json(payload.decode("utf-8"))
                except (ValueError, KeyError, json.JSONDecodeError):
                    break
                self._records.append(rec)
                offset = nl + 1
                good_bytes = offset
            if good_bytes != len(raw):
                with open(self.path, "r+b") as fh:
                    fh.truncate(good_bytes)
        self._fh = open(self.path, "ab")

    def close(self) -> None:
        self._fh.close()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def next_id(self) -> int:
        return self._records[-1].audit_id + 1 if self._records else 0

    def append(self, record: AuditRecord) -> int:
        """Validate, assign the next audit_id, append durably; returns the id."""
        audit_id = self.next_id
        rec = replace(record, audit_id=audit_id)
        rec.validate()
        payload = rec.to_json().encode("utf-8")
        self._fh.write(b"%d %s\n" % (len(payload), payload))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._records.append(rec)
        return audit_id

    def records(self) -> list[AuditRecord]:
        return list(self._records)

    def export_csv(self, path: Path) -> None:
        import csv

        cols = ["audit_id", "instrument_id", "ref_month", "field", "before",
                "after", "exception_type", "source", "actor", "timestamp", "action"]
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for rec in self._records:
                d = asdict(rec)
                d["exception_type"] = rec.exception_type.value
                writer.writerow([d[c] for c in cols])


def gold_subset(audits: Iterable[AuditRecord]) -> list[AuditRecord]:
    """Audits made through the interactive review tool, in append order."""
    return [a for a in audits if a.source == "iDQM"]


@dataclass
class LabelSet:
    """Per-type labels keyed by (instrument_id, ref_month).

    Absent keys are implicit negatives. ``sources`` records which tool
    produced the deciding audit ("bulk" or "iDQM"); rows labeled straight
    from synthetic ground truth carry the source of their audit record.
    """

    labels: dict[ExceptionType, dict[tuple[str, str], int]]
    sources: dict[ExceptionType, dict[tuple[str, str], str]]
    skipped_unknown: int = 0
    cutoff_month: Optional[str] = None


def assemble_training(
    corpus: Corpus,
    audits: Iterable[AuditRecord],
    cutoff_month: str,
    use_confirms: bool = True,
) -> LabelSet:
    """Derive per-type binary labels from the audit history up to a cutoff.

    A correct action labels its (instrument, month) positive for its type;
    a confirm forces an explicit negative (switchable off). When several
    audits hit the same (instrument, month, type), the latest by audit_id
    wins. Audits for unknown instruments are skipped and counted.
    """
    known = corpus.registry
    labels: dict[ExceptionType, dict[tuple[str, str], int]] = {t: {} for t in ExceptionType}
    sources: dict[ExceptionType, dict[tuple[str, str], str]] = {t: {} for t in ExceptionType}
    skipped = 0
    for rec in sorted(audits, key=lambda r: r.audit_id):
        if rec.ref_month > cutoff_month:
            continue
        if rec.instrument_id not in known:
            skipped += 1
            continue
        key = (rec.instrument_id, rec.ref_month)
        if rec.action == "correct":
            labels[rec.exception_type][key] = 1
            sources[rec.exception_type][key] = rec.source
        elif use_confirms:
            labels[rec.exception_type][key] = 0
            sources[rec.exception_type][key] = rec.source
    return LabelSet(labels=labels, sources=sources, skipped_unknown=skipped,
                    cutoff_month=cutoff_month)
