"""Shared domain types: snapshots, exception taxonomy, corpus container."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, asdict
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

SCHEMA_VERSION = 1


class ExceptionType(str, Enum):
    """The seven in-scope exception types, one binary detection task each."""

    AMOUNT_OUTSTANDING = "AmountOutstanding"
    COUPON_DATE = "CouponDate"
    SECURITY_STATUS = "SecurityStatus"
    MATURITY_DATE = "MaturityDate"
    ISSUE_DATE = "IssueDate"
    DIVIDEND_AMOUNT = "DividendAmount"
    ESAI2010 = "ESAI2010"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


EXCEPTION_TYPES: tuple[ExceptionType, ...] = tuple(ExceptionType)

#: Snapshot field corrupted by each exception type.
TYPE_FIELD: dict[ExceptionType, str] = {
    ExceptionType.AMOUNT_OUTSTANDING: "amount_outstanding",
    ExceptionType.COUPON_DATE: "coupon_date",
    ExceptionType.SECURITY_STATUS: "security_status",
    ExceptionType.MATURITY_DATE: "maturity_date",
    ExceptionType.ISSUE_DATE: "issue_date",
    ExceptionType.DIVIDEND_AMOUNT: "dividend_amount",
    ExceptionType.ESAI2010: "esa2010",
}

ALIVE_STATUSES = ("100", "101")
MATURED_STATUSES = ("201", "203")


@dataclass(frozen=True)
class InstrumentSnapshot:
    """One security's attribute vector for one reference month.

    Dates are ISO strings (YYYY-MM-DD), ref_month is YYYY-MM. Optional fields
    are None when the attribute does not apply to the instrument (e.g. no
    maturity date for an equity).
    """

    instrument_id: str
    ref_month: str
    amount_outstanding: Optional[float]
    market_cap: Optional[float]
    price: float
    coupon_rate: float
    coupon_date: Optional[str]
    dividend_amount: Optional[float]
    issue_date: str
    maturity_date: Optional[str]
    security_status: str
    esa2010: str
    publication_price_type: str
    country: str
    currency: str
    issuer_sector: str

    def replace(self, **kw) -> "InstrumentSnapshot":
        d = asdict(self)
        d.update(kw)
        return InstrumentSnapshot(**d)


SNAPSHOT_FIELDS = tuple(f.name for f in fields(InstrumentSnapshot))


@dataclass(frozen=True)
class InstrumentInfo:
    """Static registry entry: structural facts about one instrument."""

    instrument_id: str
    kind: str  # "debt" | "equity"
    first_month: str
    n_months: int


@dataclass
class Corpus:
    """Monthly panel of snapshots plus the instrument registry.

    Snapshots are sorted by (instrument_id, ref_month); matured instruments
    stay in the panel carrying a matured status code.
    """

    snapshots: list[InstrumentSnapshot]
    registry: dict[str, InstrumentInfo]
    months: list[str]
    schema_version: int = SCHEMA_VERSION

    def by_instrument(self) -> dict[str, list[InstrumentSnapshot]]:
        out: dict[str, list[InstrumentSnapshot]] = {}
        for snap in self.snapshots:
            out.setdefault(snap.instrument_id, []).append(snap)
        return out


# --- calendar helpers -------------------------------------------------------

def parse_date(iso: str) -> date:
    return date.fromisoformat(iso)


def month_index(months: list[str], month: str) -> int:
    return months.index(month)


def add_months(month: str, k: int) -> str:
    y, m = int(month[:4]), int(month[5:7])
    total = y * 12 + (m - 1) + k
    return f"{total // 12:04d}-{total % 12 + 1:02d}"


def month_seq(start: str, n: int) -> list[str]:
    return [add_months(start, i) for i in range(n)]


def month_first_day(month: str) -> date:
    return date(int(month[:4]), int(month[5:7]), 1)


def shift_days(iso: str, days: int) -> str:
    return (parse_date(iso) + timedelta(days=days)).isoformat()


# --- JSON-lines persistence -------------------------------------------------

def dump_jsonl(records: Iterable[dict], path: Path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_jsonl(path: Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def save_corpus(corpus: Corpus, path: Path) -> None:
    def rows():
        yield {"schema_version": corpus.schema_version, "months": corpus.months,
               "registry": [asdict(r) for r in corpus.registry.values()]}
        for snap in corpus.snapshots:
            yield asdict(snap)

    dump_jsonl(rows(), path)


def load_corpus(path: Path) -> Corpus:
    rows = load_jsonl(path)
    header = next(rows)
    registry = {r["instrument_id"]: InstrumentInfo(**r) for r in header["registry"]}
    snaps = [InstrumentSnapshot(**r) for r in rows]
    return Corpus(snapshots=snaps, registry=registry, months=header["months"],
                  schema_version=header["schema_version"])


def corpus_to_csv(corpus: Corpus, path: Path) -> None:
    import csv

    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SNAPSHOT_FIELDS)
        for snap in corpus.snapshots:
            writer.writerow(["" if v is None else v for v in
                             (getattr(snap, f) for f in SNAPSHOT_FIELDS)])
