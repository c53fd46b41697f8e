"""Synthetic securities corpus with injected, labeled data-quality errors.

The generator stands in for a confidential production database: it produces
a monthly panel of debt and equity instruments, then corrupts fields with
one of two corruption arms per exception type:

* conditioned (fraction = signal_strength): a structurally visible error
  (x10 amount jump, maturity before issue, status inconsistent with
  maturity, ...) placed preferentially on rows with a high value of a
  recorded conditioning feature;
* noise (remaining fraction): a replacement drawn from the same
  distribution the clean generator would have used, so the corrupted row is
  statistically indistinguishable from a clean one. At signal_strength=0
  labels are therefore pure noise, which is what the leakage/null
  experiment relies on.

Numeric noise corruptions replace a single month's random-walk step; date
and categorical noise corruptions replace the value across the whole series
(so no month-over-month transition betrays them) and label the sampled
month. Only months from the fourth onward are ever corrupted, matching the
months that become model rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .store import AuditRecord
from .types import (
    ALIVE_STATUSES,
    MATURED_STATUSES,
    TYPE_FIELD,
    Corpus,
    ExceptionType,
    InstrumentInfo,
    InstrumentSnapshot,
    dump_jsonl,
    load_jsonl,
    month_first_day,
    month_seq,
    parse_date,
    shift_days,
)

COUNTRIES = ("DE", "FR", "IT", "ES", "NL", "BE", "AT", "PT", "IE", "FI", "LU", "GB", "US", "JP")
CURRENCY_OF = {"GB": "GBP", "US": "USD", "JP": "JPY"}  # everyone else: EUR
DEBT_SECTORS = ("S11", "S122", "S13", "S124")
DEBT_SECTOR_W = (0.35, 0.30, 0.25, 0.10)
EQUITY_SECTORS = ("S11", "S122", "S124")
EQUITY_SECTOR_W = (0.5, 0.2, 0.3)

#: equity ESA codes consistent with each issuer sector; F_52 is fund shares.
EQUITY_ESA_OF_SECTOR = {"S11": ("F_511", "F_512"), "S122": ("F_511", "F_512"), "S124": ("F_52",)}

AMOUNT_WALK_SIGMA = 0.02
MCAP_WALK_SIGMA = 0.04
PRICE_WALK_SIGMA = 0.03
DIVIDEND_WALK_SIGMA = 0.01
ISSUANCE_EVENT_P = 0.01
DIVIDEND_EVENT_P = 0.003

#: observable column whose high values attract conditioned corruptions.
CONDITIONING_FEATURE = {
    ExceptionType.AMOUNT_OUTSTANDING: "price",
    ExceptionType.COUPON_DATE: "coupon_rate",
    ExceptionType.SECURITY_STATUS: "price",
    ExceptionType.MATURITY_DATE: "coupon_rate",
    ExceptionType.ISSUE_DATE: "price",
    ExceptionType.DIVIDEND_AMOUNT: "market_cap",
    ExceptionType.ESAI2010: "price",
}

#: types whose noise corruption rewrites the whole series (one per instrument).
SERIES_NOISE_TYPES = frozenset({
    ExceptionType.COUPON_DATE, ExceptionType.MATURITY_DATE, ExceptionType.ISSUE_DATE,
    ExceptionType.SECURITY_STATUS, ExceptionType.ESAI2010,
})


@dataclass(frozen=True)
class GenConfig:
    n_instruments: int = 4000
    n_months: int = 16
    error_rate: float = 0.03
    signal_strength: float = 1.0
    seed: int = 0
    start_month: str = "2019-01"
    bulk_share: float = 0.9
    error_rate_overrides: tuple[tuple[str, float], ...] = ()

    def validate(self) -> None:
        if self.n_instruments <= 0:
            raise ValueError("n_instruments must be positive")
        if self.n_months < 4:
            raise ValueError("n_months must be >= 4 (3-month feature windows)")
        for name, v in (("error_rate", self.error_rate),
                        ("signal_strength", self.signal_strength),
                        ("bulk_share", self.bulk_share)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.error_rate >= 1.0:
            raise ValueError("error_rate must leave clean records for training")
        for tname, rate in self.error_rate_overrides:
            ExceptionType(tname)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"override rate for {tname} out of range")

    def rate_for(self, t: ExceptionType) -> float:
        for tname, rate in self.error_rate_overrides:
            if ExceptionType(tname) is t:
                return rate
        return self.error_rate


@dataclass(frozen=True)
class GroundTruthEntry:
    instrument_id: str
    ref_month: str
    exception_type: ExceptionType
    corrupted_field: str
    clean_value: object
    corrupted_value: object
    arm: str  # "conditioned" | "noise"
    conditioning_feature: Optional[str]


@dataclass
class GroundTruth:
    """Map from (instrument_id, ref_month, type) to the injected error."""

    entries: dict[tuple[str, str, ExceptionType], GroundTruthEntry] = field(default_factory=dict)
    eligible_counts: dict[ExceptionType, int] = field(default_factory=dict)

    def is_error(self, instrument_id: str, ref_month: str, t: ExceptionType) -> bool:
        return (instrument_id, ref_month, t) in self.entries

    def positives(self, t: ExceptionType) -> set[tuple[str, str]]:
        return {(i, m) for (i, m, tt) in self.entries if tt is t}

    def count(self, t: ExceptionType) -> int:
        return sum(1 for (_, _, tt) in self.entries if tt is t)

    def save(self, path: Path) -> None:
        def rows():
            yield {"schema_version": 1,
                   "eligible_counts": {t.value: n for t, n in self.eligible_counts.items()}}
            for e in self.entries.values():
                d = asdict(e)
                d["exception_type"] = e.exception_type.value
                yield d

        dump_jsonl(rows(), path)

    @staticmethod
    def load(path: Path) -> "GroundTruth":
        rows = load_jsonl(path)
        header = next(rows)
        gt = GroundTruth()
        gt.eligible_counts = {ExceptionType(k): v for k, v in header["eligible_counts"].items()}
        for d in rows:
            d["exception_type"] = ExceptionType(d["exception_type"])
            e = GroundTruthEntry(**d)
            gt.entries[(e.instrument_id, e.ref_month, e.exception_type)] = e
        return gt


# --- universe generation ----------------------------------------------------

def _round(x: float, nd: int = 2) -> float:
    return float(round(x, nd))


def generate_universe(config: GenConfig) -> Corpus:
    """Deterministic monthly panel of clean instruments.

    Amounts follow a log random walk with occasional issuance events; dates
    and categorical codes are constant per instrument; matured instruments
    stay in the panel with a matured status code.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0FFEE]))
    months = month_seq(config.start_month, config.n_months)
    first_ord = month_first_day(months[0]).toordinal()
    last_ord = month_first_day(months[-1]).toordinal()

    snapshots: list[InstrumentSnapshot] = []
    registry: dict[str, InstrumentInfo] = {}
    for i in range(config.n_instruments):
        country = COUNTRIES[int(rng.integers(len(COUNTRIES)))]
        currency = CURRENCY_OF.get(country, "EUR")
        kind = "debt" if rng.random() < 0.6 else "equity"
        iid = f"{country}{i:010d}"
        issue_ord = first_ord - int(rng.integers(45, 15 * 365))

        alive_code = ALIVE_STATUSES[int(rng.integers(2))]
        matured_code = MATURED_STATUSES[int(rng.integers(2))]
        ppt = "CLC" if rng.random() < 0.7 else "PAY"

        if kind == "debt":
            issuer_sector = str(rng.choice(DEBT_SECTORS, p=DEBT_SECTOR_W))
            if rng.random() < 0.12:
                # matured before or during the series
                maturity_ord = int(rng.integers(first_ord - 2 * 365, last_ord + 28))
                if maturity_ord - issue_ord < 90:
                    maturity_ord = issue_ord + int(rng.integers(90, 366))
            else:
                short_term = rng.random() < 0.25
                tenor = int(rng.integers(90, 366)) if short_term else int(rng.integers(366, 30 * 365))
                maturity_ord = issue_ord + tenor
                if maturity_ord <= last_ord + 28:  # keep this branch beyond the horizon
                    maturity_ord = last_ord + 28 + int(rng.integers(1, 10 * 365))
            tenor = maturity_ord - issue_ord
            esa = "F_31" if tenor <= 366 else "F_32"
            amount0 = float(np.exp(rng.normal(np.log(2e8), 1.0)))
            mcap0 = None
            price0 = max(float(rng.normal(100.0, 5.0)), 0.01)
            if rng.random() < 0.85 and maturity_ord - issue_ord > 240:
                coupon_rate = _round(float(rng.uniform(0.5, 8.0)), 2)
                coupon_ord = issue_ord + 182 + int(rng.integers(0, 28))
                coupon_date = date.fromordinal(min(coupon_ord, maturity_ord - 30)).isoformat()
            else:
                coupon_rate, coupon_date = 0.0, None
            dividend0 = None
            maturity_date = date.fromordinal(maturity_ord).isoformat()
        else:
            issuer_sector = str(rng.choice(EQUITY_SECTORS, p=EQUITY_SECTOR_W))
            esa_set = EQUITY_ESA_OF_SECTOR[issuer_sector]
            esa = esa_set[int(rng.integers(len(esa_set)))]
            amount0 = None
            mcap0 = float(np.exp(rng.normal(np.log(5e8), 1.2)))
            price0 = float(np.exp(rng.normal(3.0, 0.8)))
            coupon_rate, coupon_date = 0.0, None
            dividend0 = _round(float(np.exp(rng.normal(-0.5, 0.7))), 4) if rng.random() < 0.8 else None
            maturity_date = None

        issue_iso = date.fromordinal(issue_ord).isoformat()
        registry[iid] = InstrumentInfo(instrument_id=iid, kind=kind,
                                       first_month=months[0], n_months=config.n_months)

        amount, mcap, price, dividend = amount0, mcap0, price0, dividend0
        for month in months:
            month_start = month_first_day(month)
            if maturity_date is not None and parse_date(maturity_date) < month_start:
                status = matured_code
            else:
                status = alive_code
            if amount is not None:
                amount *= float(np.exp(rng.normal(0.0, AMOUNT_WALK_SIGMA)))
                if rng.random() < ISSUANCE_EVENT_P:
                    amount *= 1.0 + float(rng.choice([-1, 1])) * float(rng.uniform(0.2, 0.5))
            if mcap is not None:
                mcap *= float(np.exp(rng.normal(0.0, MCAP_WALK_SIGMA)))
                if rng.random() < ISSUANCE_EVENT_P:
                    mcap *= 1.0 + float(rng.choice([-1, 1])) * float(rng.uniform(0.2, 0.5))
            price *= float(np.exp(rng.normal(0.0, PRICE_WALK_SIGMA)))
            if dividend is not None:
                dividend *= float(np.exp(rng.normal(0.0, DIVIDEND_WALK_SIGMA)))
                if rng.random() < DIVIDEND_EVENT_P:
                    dividend *= 1.0 + float(rng.choice([-1, 1])) * float(rng.uniform(0.1, 0.3))
            snapshots.append(InstrumentSnapshot(
                instrument_id=iid,
                ref_month=month,
                amount_outstanding=None if amount is None else _round(amount),
                market_cap=None if mcap is None else _round(mcap),
                price=_round(price, 4),
                coupon_rate=coupon_rate,
                coupon_date=coupon_date,
                dividend_amount=None if dividend is None else _round(dividend, 4),
                issue_date=issue_iso,
                maturity_date=maturity_date,
                security_status=status,
                esa2010=esa,
                publication_price_type=ppt,
                country=country,
                currency=currency,
                issuer_sector=issuer_sector,
            ))

    snapshots.sort(key=lambda s: (s.instrument_id, s.ref_month))
    return Corpus(snapshots=snapshots, registry=registry, months=months)


# --- error injection --------------------------------------------------------

def eligible_snapshot(snap: InstrumentSnapshot, t: ExceptionType, kind: str) -> bool:
    """Whether the type-t detection task applies to this record."""
    if t is ExceptionType.AMOUNT_OUTSTANDING:
        return snap.amount_outstanding is not None
    if t is ExceptionType.COUPON_DATE:
        return snap.coupon_date is not None
    if t is ExceptionType.MATURITY_DATE:
        return snap.maturity_date is not None
    if t is ExceptionType.DIVIDEND_AMOUNT:
        return snap.dividend_amount is not None
    if t is ExceptionType.ESAI2010:
        # fund-share classification has no exchangeable twin: out of the task
        return kind == "equity" and snap.issuer_sector != "S124"
    return True  # SecurityStatus, IssueDate


def eligible_mask_for(corpus: Corpus, t: ExceptionType) -> list[bool]:
    """Row mask (corpus snapshot order) of records the type-t task applies to."""
    return [eligible_snapshot(s, t, corpus.registry[s.instrument_id].kind) for s in corpus.snapshots]


def _transpose_leading_digits(value: float) -> Optional[float]:
    digits = str(int(abs(value)))
    if len(digits) < 2 or digits[0] == digits[1] or digits[1] == "0":
        return None
    swapped = digits[1] + digits[0] + digits[2:]
    return float(swapped) + (abs(value) - int(abs(value)))


class _Injector:
    """Applies one corruption plan to a mutable copy of the corpus."""

    def __init__(self, corpus: Corpus, rng: np.random.Generator):
        self.rng = rng
        self.months = corpus.months
        self.registry = corpus.registry
        self.rows: dict[str, list[dict]] = {}
        for snap in corpus.snapshots:
            self.rows.setdefault(snap.instrument_id, []).append(asdict(snap))

    def row(self, iid: str, month: str) -> dict:
        return self.rows[iid][self.months.index(month)]

    def series(self, iid: str) -> list[dict]:
        return self.rows[iid]

    def corrupt(self, t: ExceptionType, iid: str, month: str, arm: str) -> object:
        """Mutates the corpus copy; returns the corrupted value at the labeled row."""
        fn = getattr(self, f"_{'cond' if arm == 'conditioned' else 'noise'}_{t.name.lower()}")
        return fn(iid, month)

    # -- conditioned morphologies (feature-visible) --

    def _cond_amount_outstanding(self, iid, month):
        row = self.row(iid, month)
        pick = self.rng.random()
        if pick < 1 / 3:
            bad = row["amount_outstanding"] * 10.0
        elif pick < 2 / 3:
            bad = row["amount_outstanding"] * 0.1
        else:
            bad = _transpose_leading_digits(row["amount_outstanding"])
            if bad is None:
                bad = row["amount_outstanding"] * 10.0
        row["amount_outstanding"] = _round(bad)
        return row["amount_outstanding"]

    def _cond_dividend_amount(self, iid, month):
        row = self.row(iid, month)
        row["dividend_amount"] = _round(
            row["dividend_amount"] * (10.0 if self.rng.random() < 0.5 else 0.1), 4)
        return row["dividend_amount"]

    def _cond_maturity_date(self, iid, month):
        row = self.row(iid, month)
        row["maturity_date"] = shift_days(row["issue_date"], -int(self.rng.integers(30, 1000)))
        return row["maturity_date"]

    def _cond_issue_date(self, iid, month):
        row = self.row(iid, month)
        if row["maturity_date"] is not None and self.rng.random() < 0.5:
            bad = shift_days(row["maturity_date"], int(self.rng.integers(30, 400)))
        else:
            bad = (month_first_day(month) +
                   timedelta(days=int(self.rng.integers(40, 400)))).isoformat()
        row["issue_date"] = bad
        return bad

    def _cond_coupon_date(self, iid, month):
        row = self.row(iid, month)
        anchor = row["maturity_date"] or row["coupon_date"]
        row["coupon_date"] = shift_days(anchor, int(self.rng.integers(30, 720)))
        return row["coupon_date"]

    def _cond_security_status(self, iid, month):
        row = self.row(iid, month)
        if row["security_status"] in ALIVE_STATUSES:
            bad = MATURED_STATUSES[int(self.rng.integers(2))]
        else:
            bad = ALIVE_STATUSES[int(self.rng.integers(2))]
        row["security_status"] = bad
        return bad

    def _cond_esai2010(self, iid, month):
        row = self.row(iid, month)
        inconsistent = [c for c in ("F_52", "F_31", "F_32")
                        if c not in EQUITY_ESA_OF_SECTOR[row["issuer_sector"]]]
        bad = inconsistent[int(self.rng.integers(len(inconsistent)))]
        row["esa2010"] = bad
        return bad

    # -- noise morphologies (distribution-preserving) --

    def _resample_walk(self, iid, month, col, sigma, event_p, event_lo, event_hi, nd):
        series = self.series(iid)
        idx = self.months.index(month)
        row, prev = series[idx], series[idx - 1]
        clean = row[col]
        bad = clean
        while bad == clean:
            v = prev[col] * float(np.exp(self.rng.normal(0.0, sigma)))
            if self.rng.random() < event_p:
                v *= 1.0 + float(self.rng.choice([-1, 1])) * float(self.rng.uniform(event_lo, event_hi))
            bad = _round(v, nd)
        row[col] = bad
        return bad

    def _noise_amount_outstanding(self, iid, month):
        return self._resample_walk(iid, month, "amount_outstanding",
                                   AMOUNT_WALK_SIGMA, ISSUANCE_EVENT_P, 0.2, 0.5, 2)

    def _noise_dividend_amount(self, iid, month):
        return self._resample_walk(iid, month, "dividend_amount",
                                   DIVIDEND_WALK_SIGMA, DIVIDEND_EVENT_P, 0.1, 0.3, 4)

    def _jitter_day_in_month(self, iso: str) -> str:
        d = parse_date(iso)
        day = d.day
        while day == d.day:
            day = 1 + int(self.rng.integers(28))
        return d.replace(day=day).isoformat()

    def _replace_series(self, iid, col, clean, bad):
        for r in self.series(iid):
            if r[col] == clean:
                r[col] = bad

    def _noise_maturity_date(self, iid, month):
        # same calendar month, different day: every maturity-derived signal
        # (alive flag per month, tenor bucket) keeps its value
        clean = self.row(iid, month)["maturity_date"]
        bad = self._jitter_day_in_month(clean)
        self._replace_series(iid, "maturity_date", clean, bad)
        return bad

    def _noise_issue_date(self, iid, month):
        clean = self.row(iid, month)["issue_date"]
        bad = self._jitter_day_in_month(clean)
        self._replace_series(iid, "issue_date", clean, bad)
        return bad

    def _noise_coupon_date(self, iid, month):
        clean = self.row(iid, month)["coupon_date"]
        bad = self._jitter_day_in_month(clean)
        self._replace_series(iid, "coupon_date", clean, bad)
        return bad

    def _noise_security_status(self, iid, month):
        # swap within the alive or matured pair across that whole segment;
        # 100/101 and 201/203 are assigned exchangeably by the generator
        clean = self.row(iid, month)["security_status"]
        pair = ALIVE_STATUSES if clean in ALIVE_STATUSES else MATURED_STATUSES
        bad = pair[1 - pair.index(clean)]
        self._replace_series(iid, "security_status", clean, bad)
        return bad

    def _noise_esai2010(self, iid, month):
        row = self.row(iid, month)
        clean = row["esa2010"]
        pair = EQUITY_ESA_OF_SECTOR[row["issuer_sector"]]
        bad = pair[1 - pair.index(clean)]
        self._replace_series(iid, "esa2010", clean, bad)
        return bad

    def rebuild(self) -> Corpus:
        snaps = [InstrumentSnapshot(**d) for rows in self.rows.values() for d in rows]
        snaps.sort(key=lambda s: (s.instrument_id, s.ref_month))
        return Corpus(snapshots=snaps, registry=self.registry, months=self.months)


def _conditioned_weights(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    ranks[order] = np.arange(len(values), dtype=np.float64)
    pct = ranks / max(len(values) - 1, 1)
    w = pct * pct + 0.05
    return w / w.sum()


def inject_exceptions(
    corpus: Corpus, config: GenConfig
) -> tuple[Corpus, GroundTruth, list[AuditRecord]]:
    """Corrupt the corpus per type and emit ground truth plus the audit log.

    Every injected error gets a matching correct-action audit record whose
    before-value is the corrupted value and after-value the clean one; the
    source tool is "bulk" for a configurable majority share, else "iDQM".
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE44048]))
    snaps = corpus.snapshots
    scoreable = [i for i, s in enumerate(snaps)
                 if corpus.months.index(s.ref_month) >= 3]

    inj = _Injector(corpus, rng)
    gt = GroundTruth()
    plans: list[tuple[str, str, ExceptionType, str]] = []

    for t in sorted(ExceptionType, key=lambda t: t.value):
        rate = config.rate_for(t)
        elig = [i for i in scoreable
                if eligible_snapshot(snaps[i], t, corpus.registry[snaps[i].instrument_id].kind)]
        gt.eligible_counts[t] = len(elig)
        if not elig or rate == 0.0:
            continue
        k = int(rng.binomial(len(elig), rate))
        if k >= len(elig):
            raise ValueError(f"error_rate would corrupt every eligible {t.value} record")
        if k == 0:
            continue
        k_cond = int(rng.binomial(k, config.signal_strength))

        feat = CONDITIONING_FEATURE[t]
        values = np.array([getattr(snaps[i], feat) or 0.0 for i in elig], dtype=np.float64)
        weights = _conditioned_weights(values)
        cond_pos = rng.choice(len(elig), size=k_cond, replace=False, p=weights) if k_cond else []
        cond_rows = {elig[j] for j in cond_pos}

        rest = np.array([i for i in elig if i not in cond_rows], dtype=np.int64)
        k_noise = k - k_cond
        noise_rows: list[int] = []
        if k_noise:
            shuffled = rng.permutation(rest)
            if t in SERIES_NOISE_TYPES:
                # one series rewrite per instrument keeps the replacement well defined
                seen: set[str] = set()
                for i in shuffled:
                    iid = snaps[int(i)].instrument_id
                    if iid not in seen:
                        seen.add(iid)
                        noise_rows.append(int(i))
                    if len(noise_rows) == k_noise:
                        break
            else:
                noise_rows = [int(i) for i in shuffled[:k_noise]]

        for i in sorted(cond_rows):
            plans.append((snaps[i].instrument_id, snaps[i].ref_month, t, "conditioned"))
        for i in sorted(noise_rows):
            plans.append((snaps[i].instrument_id, snaps[i].ref_month, t, "noise"))

    # apply noise (series-level) before conditioned (row-level) mutations
    plans.sort(key=lambda p: (p[3] != "noise", p[2].value, p[0], p[1]))
    pristine = {(s.instrument_id, s.ref_month): s for s in snaps}
    for iid, month, t, arm in plans:
        field_name = TYPE_FIELD[t]
        clean = getattr(pristine[(iid, month)], field_name)
        corrupted = inj.corrupt(t, iid, month, arm)
        if corrupted == clean:  # unreachable by construction; hard fallback
            corrupted = inj.corrupt(t, iid, month, "conditioned")
        gt.entries[(iid, month, t)] = GroundTruthEntry(
            instrument_id=iid, ref_month=month, exception_type=t,
            corrupted_field=field_name, clean_value=clean, corrupted_value=corrupted,
            arm=arm, conditioning_feature=CONDITIONING_FEATURE[t] if arm == "conditioned" else None)

    corrupted_corpus = inj.rebuild()

    audits: list[AuditRecord] = []
    entries = sorted(gt.entries.values(),
                     key=lambda e: (e.ref_month, e.exception_type.value, e.instrument_id))
    for seq, e in enumerate(entries):
        source = "bulk" if rng.random() < config.bulk_share else "iDQM"
        audits.append(AuditRecord(
            audit_id=seq, instrument_id=e.instrument_id, ref_month=e.ref_month,
            field=e.corrupted_field, before=e.corrupted_value, after=e.clean_value,
            exception_type=e.exception_type, source=source,
            actor=f"dqm{int(rng.integers(24)):02d}",
            timestamp=f"{e.ref_month}-28T12:00:00+00:00", action="correct"))
    return corrupted_corpus, gt, audits


def plant_pattern(
    corpus: Corpus,
    t: ExceptionType,
    rate: float,
    seed: int,
) -> tuple[Corpus, GroundTruth]:
    """Inject conditioned-morphology errors of one type with NO audit records.

    Used by the feedback-loop demo: the pattern exists in the data and the
    ground truth, but the initial training labels know nothing about it.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A77E4]))
    snaps = corpus.snapshots
    elig = [i for i, s in enumerate(snaps)
            if corpus.months.index(s.ref_month) >= 3
            and eligible_snapshot(s, t, corpus.registry[s.instrument_id].kind)]
    k = max(1, int(round(rate * len(elig))))
    picks = sorted(int(j) for j in rng.choice(np.array(elig), size=k, replace=False))

    inj = _Injector(corpus, rng)
    gt = GroundTruth(eligible_counts={t: len(elig)})
    for i in picks:
        iid, month = snaps[i].instrument_id, snaps[i].ref_month
        fname = TYPE_FIELD[t]
        clean = getattr(snaps[i], fname)
        corrupted = inj.corrupt(t, iid, month, "conditioned")
        gt.entries[(iid, month, t)] = GroundTruthEntry(
            instrument_id=iid, ref_month=month, exception_type=t,
            corrupted_field=fname, clean_value=clean, corrupted_value=corrupted,
            arm="conditioned", conditioning_feature=None)
    return inj.rebuild(), gt


def save_audits_jsonl(audits: list[AuditRecord], path: Path) -> None:
    dump_jsonl((json.loads(a.to_json()) for a in audits), path)


def load_audits_jsonl(path: Path) -> list[AuditRecord]:
    return [AuditRecord.from_json(json.dumps(d)) for d in load_jsonl(path)]
