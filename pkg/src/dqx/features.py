"""Feature engineering: monthly change features, date distances, lag flags,
leakage-safe target encoding and the temporal train/validation/test split.

Rows are (instrument, month) pairs from the fourth month onward so every row
has a full 3-month history window. A model for exception type T sees the
shared base features plus T's own target-encoded categorical columns, and is
only ever trained/evaluated on rows where T's field applies (its eligibility
mask).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import datagen
from .store import LabelSet
from .types import Corpus, ExceptionType, month_first_day, parse_date

CLAMP = 10.0
MISSING_VALUE = 0.0  # numeric stand-in; the paired indicator carries absence

WALK_COLS = ("amount_outstanding", "market_cap", "price", "dividend_amount")
OPTIONAL_NUMERIC = ("amount_outstanding", "market_cap", "dividend_amount")
LAG_COLS = ("security_status", "esa2010", "publication_price_type", "country",
            "currency", "issuer_sector", "coupon_date", "maturity_date", "issue_date")
CAT_COLS = ("security_status", "esa2010", "publication_price_type", "country",
            "currency", "issuer_sector", "status_x_matured", "esa_x_issuer")


# --- scalar operations ------------------------------------------------------

def pct_change(curr: float, prev: float) -> float:
    """Relative change vs the previous value, clamped to +-CLAMP.

    prev == 0 maps to 0 when curr is also 0, else to the signed clamp bound;
    the caller records a prev_zero flag alongside.
    """
    if prev == 0.0:
        if curr == 0.0:
            return 0.0
        return CLAMP if curr > 0 else -CLAMP
    change = (curr - prev) / abs(prev)
    return max(-CLAMP, min(CLAMP, change))


def median_pct_change(curr: float, window: Sequence[float]) -> Optional[float]:
    """pct_change against the median of up to three past values.

    The median of two values is their mean; an empty window yields None and
    the caller emits a missing indicator.
    """
    vals = [v for v in window if v is not None]
    if not vals:
        return None
    vals.sort()
    n = len(vals)
    med = vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])
    return pct_change(curr, med)


def lag_changed(curr: object, prev: object) -> bool:
    """True iff the value differs from last month (absent == absent is unchanged)."""
    return curr != prev


def days_between(a: str, b: str) -> int:
    """Signed day count b - a over ISO dates."""
    return (parse_date(b) - parse_date(a)).days


# --- target encoding --------------------------------------------------------

@dataclass
class TargetEncoder:
    """Smoothed positive-rate encoding with out-of-fold statistics for train rows.

    enc(c) = (n_c * mean_c + m * prior) / (n_c + m); unseen categories map to
    the global prior. Train rows are encoded from statistics excluding their
    own fold so a row's label never feeds its own feature.
    """

    m: float
    k_folds: int
    prior: float
    counts: dict[str, float]
    sums: dict[str, float]
    fold_counts: dict[str, list[float]]
    fold_sums: dict[str, list[float]]
    total_n: float
    total_sum: float
    fold_n: list[float]
    fold_sum: list[float]
    folds: list[int]  # fold id of each training row, fitting order

    def encode(self, category: str) -> float:
        n_c = self.counts.get(category, 0.0)
        s_c = self.sums.get(category, 0.0)
        return (s_c + self.m * self.prior) / (n_c + self.m)

    def encode_train(self, category: str, fold: int) -> float:
        n_c = self.counts.get(category, 0.0) - self.fold_counts.get(category, [0.0] * self.k_folds)[fold]
        s_c = self.sums.get(category, 0.0) - self.fold_sums.get(category, [0.0] * self.k_folds)[fold]
        n_tot = self.total_n - self.fold_n[fold]
        s_tot = self.total_sum - self.fold_sum[fold]
        prior = s_tot / n_tot if n_tot > 0 else self.prior
        return (s_c + self.m * prior) / (n_c + self.m)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TargetEncoder":
        return TargetEncoder(**d)


def fit_target_encoder(
    categories: Sequence[str],
    labels: Sequence[int],
    m: float = 10.0,
    k_folds: int = 5,
    seed: int = 0,
) -> TargetEncoder:
    if len(categories) != len(labels):
        raise ValueError("categories and labels must have the same length")
    if len(categories) == 0:
        raise ValueError("cannot fit an encoder on empty input")
    if m <= 0:
        raise ValueError("smoothing mass m must be positive")
    n = len(categories)
    k_folds = max(1, min(k_folds, n))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A06E7]))
    folds = [int(f) for f in rng.permutation(n) % k_folds]

    counts: dict[str, float] = {}
    sums: dict[str, float] = {}
    fold_counts: dict[str, list[float]] = {}
    fold_sums: dict[str, list[float]] = {}
    fold_n = [0.0] * k_folds
    fold_sum = [0.0] * k_folds
    for cat, y, f in zip(categories, labels, folds):
        y = float(y)
        counts[cat] = counts.get(cat, 0.0) + 1.0
        sums[cat] = sums.get(cat, 0.0) + y
        fold_counts.setdefault(cat, [0.0] * k_folds)[f] += 1.0
        fold_sums.setdefault(cat, [0.0] * k_folds)[f] += y
        fold_n[f] += 1.0
        fold_sum[f] += y
    total_n = float(n)
    total_sum = float(sum(fold_sum))
    return TargetEncoder(m=float(m), k_folds=k_folds, prior=total_sum / total_n,
                         counts=counts, sums=sums, fold_counts=fold_counts,
                         fold_sums=fold_sums, total_n=total_n, total_sum=total_sum,
                         fold_n=fold_n, fold_sum=fold_sum, folds=folds)


# --- schema -----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str  # numeric | boolean | encoded-categorical
    source: str
    transform: str


@dataclass
class FeatureSchema:
    specs: list[FeatureSpec]

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def __len__(self) -> int:
        return len(self.specs)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> list[dict]:
        return [asdict(s) for s in self.specs]

    @staticmethod
    def from_json(rows: list[dict]) -> "FeatureSchema":
        return FeatureSchema([FeatureSpec(**r) for r in rows])


def schema_hash(schema: FeatureSchema, encoder_blob: Optional[dict] = None) -> str:
    payload = {"schema": schema.to_json(), "encoders": encoder_blob or {}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --- matrix -----------------------------------------------------------------

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_VAL: "validation", SPLIT_TEST: "test"}


@dataclass
class FeatureMatrix:
    keys: list[tuple[str, str]]
    months: list[str]
    base: np.ndarray
    base_schema: FeatureSchema
    cats: dict[str, list[str]]  # raw categorical value per CAT_COL, row order
    labels: dict[ExceptionType, np.ndarray]
    sources: dict[ExceptionType, np.ndarray]  # "" | "bulk" | "iDQM"
    eligible: dict[ExceptionType, np.ndarray]
    amounts: np.ndarray  # amount outstanding, market cap fallback
    split: Optional[np.ndarray] = None
    gold: dict[ExceptionType, np.ndarray] = field(default_factory=dict)
    encoded: dict[ExceptionType, np.ndarray] = field(default_factory=dict)
    encoders: dict[str, TargetEncoder] = field(default_factory=dict)  # "type/col"
    schema_version: int = 1

    @property
    def n_rows(self) -> int:
        return len(self.keys)

    def type_schema(self, t: ExceptionType) -> FeatureSchema:
        enc_specs = [FeatureSpec(name=f"enc__{c}", kind="encoded-categorical",
                                 source=c, transform=f"target-encode:{t.value}/{c}")
                     for c in CAT_COLS]
        return FeatureSchema(self.base_schema.specs + enc_specs)

    def type_schema_hash(self, t: ExceptionType) -> str:
        blob = {f"{t.value}/{c}": self.encoders[f"{t.value}/{c}"].to_dict()
                for c in CAT_COLS if f"{t.value}/{c}" in self.encoders}
        return schema_hash(self.type_schema(t), blob)

    def matrix_for(self, t: ExceptionType) -> np.ndarray:
        if t not in self.encoded:
            raise ValueError(f"encoders not fitted for {t.value}")
        return np.hstack([self.base, self.encoded[t]])

    def row_mask(self, t: ExceptionType, split: Optional[int] = None) -> np.ndarray:
        mask = self.eligible[t].copy()
        if split is not None:
            if self.split is None:
                raise ValueError("temporal_split has not run")
            mask &= self.split == split
        return mask

    def gold_mask(self, t: ExceptionType) -> np.ndarray:
        """Gold evaluation pool: test rows minus bulk-sourced positives."""
        if self.split is None:
            raise ValueError("temporal_split has not run")
        bulk_pos = (self.sources[t] == "bulk") & (self.labels[t] == 1)
        return self.row_mask(t, SPLIT_TEST) & ~bulk_pos


# --- building ---------------------------------------------------------------

def _base_schema() -> FeatureSchema:
    specs: list[FeatureSpec] = []
    for col in WALK_COLS:
        specs.append(FeatureSpec(f"{col}__raw", "numeric", col, "identity"))
        specs.append(FeatureSpec(f"{col}__pct", "numeric", col, "pct-change-1m"))
        specs.append(FeatureSpec(f"{col}__pct_missing", "boolean", col, "pct-missing"))
        specs.append(FeatureSpec(f"{col}__prev_zero", "boolean", col, "prev-zero"))
        specs.append(FeatureSpec(f"{col}__medpct", "numeric", col, "pct-change-median3"))
        specs.append(FeatureSpec(f"{col}__medpct_missing", "boolean", col, "medpct-missing"))
    specs.append(FeatureSpec("coupon_rate__raw", "numeric", "coupon_rate", "identity"))
    for col in OPTIONAL_NUMERIC:
        specs.append(FeatureSpec(f"{col}__missing", "boolean", col, "missing"))
    specs.append(FeatureSpec("days_since_issue", "numeric", "issue_date", "days-to-ref"))
    specs.append(FeatureSpec("days_to_maturity", "numeric", "maturity_date", "ref-to-days"))
    specs.append(FeatureSpec("maturity_date__missing", "boolean", "maturity_date", "missing"))
    specs.append(FeatureSpec("tenor_days", "numeric", "maturity_date", "issue-to-maturity"))
    specs.append(FeatureSpec("days_to_coupon", "numeric", "coupon_date", "ref-to-days"))
    specs.append(FeatureSpec("coupon_date__missing", "boolean", "coupon_date", "missing"))
    specs.append(FeatureSpec("coupon_to_maturity", "numeric", "coupon_date", "coupon-to-maturity"))
    specs.append(FeatureSpec("matured", "boolean", "maturity_date", "maturity-passed"))
    for col in LAG_COLS:
        specs.append(FeatureSpec(f"{col}__chg", "boolean", col, "lag-changed"))
    return FeatureSchema(specs)


def build_matrix(corpus: Corpus, label_set: LabelSet) -> FeatureMatrix:
    """Engineered base matrix with per-type labels; encoding comes later.

    One row per (instrument, month) from the fourth month on. Deterministic
    and schema-stable: same corpus and labels give an identical matrix.
    """
    if len(corpus.months) < 4:
        raise ValueError("corpus must span at least 4 months")
    schema = _base_schema()
    ncols = len(schema)
    months = corpus.months
    ref_days = {m: month_first_day(m).isoformat() for m in months}

    keys: list[tuple[str, str]] = []
    rows: list[list[float]] = []
    cats: dict[str, list[str]] = {c: [] for c in CAT_COLS}
    amounts: list[float] = []
    elig_lists: dict[ExceptionType, list[bool]] = {t: [] for t in ExceptionType}

    for iid, series in sorted(corpus.by_instrument().items()):
        kind = corpus.registry[iid].kind
        for ti in range(3, len(series)):
            snap, prev = series[ti], series[ti - 1]
            ref = ref_days[snap.ref_month]
            row = [0.0] * ncols
            j = 0
            for col in WALK_COLS:
                curr = getattr(snap, col)
                prv = getattr(prev, col)
                window = [getattr(series[ti - k], col) for k in (1, 2, 3)]
                if curr is not None and prv is not None:
                    row[j] = curr
                    row[j + 1] = pct_change(curr, prv)
                    row[j + 3] = 1.0 if prv == 0.0 else 0.0
                elif curr is not None:
                    row[j] = curr
                    row[j + 2] = 1.0
                else:
                    row[j + 2] = 1.0
                med = None if curr is None else median_pct_change(curr, window)
                if med is None:
                    row[j + 5] = 1.0
                else:
                    row[j + 4] = med
                j += 6
            row[j] = snap.coupon_rate
            j += 1
            for col in OPTIONAL_NUMERIC:
                row[j] = 1.0 if getattr(snap, col) is None else 0.0
                j += 1
            row[j] = days_between(snap.issue_date, ref)
            j += 1
            matured = False
            if snap.maturity_date is not None:
                row[j] = days_between(ref, snap.maturity_date)
                row[j + 2] = days_between(snap.issue_date, snap.maturity_date)
                matured = parse_date(snap.maturity_date) < parse_date(ref)
            else:
                row[j + 1] = 1.0
            j += 3
            if snap.coupon_date is not None:
                row[j] = days_between(ref, snap.coupon_date)
                if snap.maturity_date is not None:
                    row[j + 2] = days_between(snap.coupon_date, snap.maturity_date)
            else:
                row[j + 1] = 1.0
            j += 3
            row[j] = 1.0 if matured else 0.0
            j += 1
            for col in LAG_COLS:
                row[j] = 1.0 if lag_changed(getattr(snap, col), getattr(prev, col)) else 0.0
                j += 1
            assert j == ncols

            keys.append((iid, snap.ref_month))
            rows.append(row)
            for c in CAT_COLS[:6]:
                cats[c].append(getattr(snap, c))
            cats["status_x_matured"].append(f"{snap.security_status}|{int(matured)}")
            cats["esa_x_issuer"].append(f"{snap.esa2010}|{snap.issuer_sector}")
            if snap.amount_outstanding is not None:
                amounts.append(snap.amount_outstanding)
            elif snap.market_cap is not None:
                amounts.append(snap.market_cap)
            else:
                amounts.append(0.0)
            for t in ExceptionType:
                elig_lists[t].append(datagen.eligible_snapshot(snap, t, kind))

    labels = {}
    sources = {}
    for t in ExceptionType:
        lab = np.zeros(len(keys), dtype=np.int8)
        src = np.array([""] * len(keys), dtype=object)
        tl = label_set.labels.get(t, {})
        ts = label_set.sources.get(t, {})
        for i, key in enumerate(keys):
            if key in tl:
                lab[i] = tl[key]
                src[i] = ts.get(key, "")
        labels[t] = lab
        sources[t] = src

    return FeatureMatrix(
        keys=keys, months=months[3:], base=np.array(rows, dtype=np.float64),
        base_schema=schema, cats=cats, labels=labels, sources=sources,
        eligible={t: np.array(v, dtype=bool) for t, v in elig_lists.items()},
        amounts=np.array(amounts, dtype=np.float64))


def temporal_split(matrix: FeatureMatrix,
                   ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> FeatureMatrix:
    """Tag rows train/validation/test on month boundaries closest to the ratios.

    Whole months share a tag and the three blocks are in strict temporal
    order. Gold flags mark test rows whose label came from an iDQM audit.
    """
    row_months = np.array([m for _, m in matrix.keys])
    uniq = sorted(set(row_months))
    if len(uniq) < 3:
        raise ValueError("need at least 3 distinct months to split")
    counts = np.array([(row_months == m).sum() for m in uniq], dtype=np.float64)
    total = counts.sum()
    best, best_cut = None, None
    for i in range(1, len(uniq) - 1):
        for jj in range(i + 1, len(uniq)):
            props = (counts[:i].sum() / total, counts[i:jj].sum() / total, counts[jj:].sum() / total)
            dist = sum(abs(p - r) for p, r in zip(props, ratios))
            if best is None or dist < best - 1e-12:
                best, best_cut = dist, (i, jj)
    i, jj = best_cut
    month_tag = {}
    for k, m in enumerate(uniq):
        month_tag[m] = SPLIT_TRAIN if k < i else (SPLIT_VAL if k < jj else SPLIT_TEST)
    matrix.split = np.array([month_tag[m] for m in row_months], dtype=np.int8)
    for t in ExceptionType:
        matrix.gold[t] = (matrix.split == SPLIT_TEST) & (matrix.sources[t] == "iDQM")
    return matrix


def fit_encoders(matrix: FeatureMatrix, m: float = 10.0, k_folds: int = 5,
                 seed: int = 0) -> FeatureMatrix:
    """Fit per-type target encoders on train rows and fill encoded columns.

    Train rows get out-of-fold encodings; validation/test rows use the full
    train statistics. Encoders are fitted on rows eligible for the type, the
    same population its model trains on.
    """
    if matrix.split is None:
        raise ValueError("run temporal_split before fitting encoders")
    n = matrix.n_rows
    for t in ExceptionType:
        train_idx = np.flatnonzero(matrix.row_mask(t, SPLIT_TRAIN))
        block = np.zeros((n, len(CAT_COLS)), dtype=np.float64)
        for ci, col in enumerate(CAT_COLS):
            values = matrix.cats[col]
            if len(train_idx) == 0:
                continue
            enc = fit_target_encoder([values[i] for i in train_idx],
                                     matrix.labels[t][train_idx].tolist(),
                                     m=m, k_folds=k_folds, seed=seed)
            matrix.encoders[f"{t.value}/{col}"] = enc
            fold_arr = np.full(n, -1, dtype=np.int32)
            fold_arr[train_idx] = enc.folds
            uniq = set(values)
            full_map = {c: enc.encode(c) for c in uniq}
            oof_map = {(c, f): enc.encode_train(c, f)
                       for c in uniq for f in range(enc.k_folds)}
            for i in range(n):
                f = fold_arr[i]
                block[i, ci] = oof_map[(values[i], f)] if f >= 0 else full_map[values[i]]
        matrix.encoded[t] = block
    return matrix


def featurize(corpus: Corpus, label_set: LabelSet, m: float = 10.0,
              k_folds: int = 5, seed: int = 0,
              ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> FeatureMatrix:
    """build_matrix + temporal_split + fit_encoders in one call."""
    matrix = build_matrix(corpus, label_set)
    temporal_split(matrix, ratios)
    return fit_encoders(matrix, m=m, k_folds=k_folds, seed=seed)


# --- persistence ------------------------------------------------------------

def save_matrix(matrix: FeatureMatrix, csv_path: Path, sidecar_path: Path) -> None:
    """Columnar CSV plus JSON sidecar (schema, encoders, split metadata)."""
    tcols = [t.value for t in ExceptionType]
    header = (["instrument_id", "ref_month", "split", "amount"]
              + [f"label__{t}" for t in tcols] + [f"source__{t}" for t in tcols]
              + [f"eligible__{t}" for t in tcols] + [f"gold__{t}" for t in tcols]
              + [f"cat__{c}" for c in CAT_COLS]
              + matrix.base_schema.names
              + [f"enc__{c}__{t}" for t in tcols for c in CAT_COLS])
    with open(csv_path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (iid, month) in enumerate(matrix.keys):
            row = [iid, month,
                   int(matrix.split[i]) if matrix.split is not None else "",
                   repr(float(matrix.amounts[i]))]
            row += [int(matrix.labels[t][i]) for t in ExceptionType]
            row += [matrix.sources[t][i] for t in ExceptionType]
            row += [int(matrix.eligible[t][i]) for t in ExceptionType]
            row += [int(matrix.gold[t][i]) if matrix.gold else 0 for t in ExceptionType]
            row += [matrix.cats[c][i] for c in CAT_COLS]
            row += [repr(float(v)) for v in matrix.base[i]]
            for t in ExceptionType:
                enc = matrix.encoded.get(t)
                row += [repr(float(v)) for v in enc[i]] if enc is not None else [""] * len(CAT_COLS)
            w.writerow(row)
    sidecar = {
        "schema_version": matrix.schema_version,
        "months": matrix.months,
        "base_schema": matrix.base_schema.to_json(),
        "cat_cols": list(CAT_COLS),
        "encoders": {k: v.to_dict() for k, v in matrix.encoders.items()},
        "type_schema_hash": {t.value: matrix.type_schema_hash(t)
                             for t in ExceptionType if t in matrix.encoded},
    }
    with open(sidecar_path, "w", newline="\n") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_matrix(csv_path: Path, sidecar_path: Path) -> FeatureMatrix:
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    base_schema = FeatureSchema.from_json(sidecar["base_schema"])
    with open(csv_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}
    tcols = [t.value for t in ExceptionType]
    n = len(rows)
    keys = [(r[col["instrument_id"]], r[col["ref_month"]]) for r in rows]
    split = np.array([int(r[col["split"]]) for r in rows], dtype=np.int8) \
        if rows and rows[0][col["split"]] != "" else None
    amounts = np.array([float(r[col["amount"]]) for r in rows], dtype=np.float64)
    base = np.array([[float(r[col[name]]) for name in base_schema.names] for r in rows],
                    dtype=np.float64)
    cats = {c: [r[col[f"cat__{c}"]] for r in rows] for c in CAT_COLS}
    labels, sources, eligible, gold, encoded = {}, {}, {}, {}, {}
    for t, tv in zip(ExceptionType, tcols):
        labels[t] = np.array([int(r[col[f"label__{tv}"]]) for r in rows], dtype=np.int8)
        sources[t] = np.array([r[col[f"source__{tv}"]] for r in rows], dtype=object)
        eligible[t] = np.array([r[col[f"eligible__{tv}"]] == "1" for r in rows], dtype=bool)
        gold[t] = np.array([r[col[f"gold__{tv}"]] == "1" for r in rows], dtype=bool)
        if rows and rows[0][col[f"enc__{CAT_COLS[0]}__{tv}"]] != "":
            encoded[t] = np.array(
                [[float(r[col[f"enc__{c}__{tv}"]]) for c in CAT_COLS] for r in rows],
                dtype=np.float64)
    matrix = FeatureMatrix(
        keys=keys, months=sidecar["months"], base=base, base_schema=base_schema,
        cats=cats, labels=labels, sources=sources, eligible=eligible,
        amounts=amounts, split=split, gold=gold, encoded=encoded,
        encoders={k: TargetEncoder.from_dict(v) for k, v in sidecar["encoders"].items()},
        schema_version=sidecar["schema_version"])
    return matrix
