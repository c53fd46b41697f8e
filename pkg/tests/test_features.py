import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqx.datagen import GenConfig, generate_universe, inject_exceptions
from dqx.features import (
    CLAMP,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    build_matrix,
    days_between,
    featurize,
    fit_target_encoder,
    lag_changed,
    load_matrix,
    median_pct_change,
    pct_change,
    save_matrix,
    temporal_split,
)
from dqx.store import LabelSet, assemble_training
from dqx.types import ExceptionType


def empty_labels() -> LabelSet:
    return LabelSet(labels={t: {} for t in ExceptionType},
                    sources={t: {} for t in ExceptionType})


# --- scalar ops ---------------------------------------------------------------

def test_pct_change_examples():
    assert pct_change(110, 100) == pytest.approx(0.10)
    assert pct_change(100, 100) == 0.0
    assert pct_change(5, 0) == CLAMP
    assert pct_change(-5, 0) == -CLAMP
    assert pct_change(0, 0) == 0.0
    assert pct_change(1e9, 1) == CLAMP  # clamp bound


@given(st.floats(min_value=1e-6, max_value=1e12, allow_nan=False))
def test_pct_change_identity(x):
    assert pct_change(x, x) == 0.0
    assert pct_change(-x, -x) == 0.0


def test_median_pct_change_examples():
    assert median_pct_change(120, [100, 100, 100]) == pytest.approx(0.20)
    assert median_pct_change(100, [90, 100, 110]) == 0.0
    # two-value median rule, checked against a direct median computation
    assert median_pct_change(100, [80, 120]) == pct_change(100, float(np.median([80, 120])))
    assert median_pct_change(100, [80, 120]) == 0.0
    assert median_pct_change(100, []) is None
    assert median_pct_change(100, [None, None, 90]) == pct_change(100, 90)


@given(st.lists(st.floats(min_value=1.0, max_value=1e6), min_size=1, max_size=3),
       st.floats(min_value=1.0, max_value=1e6))
def test_median_pct_change_matches_numpy_median(window, curr):
    got = median_pct_change(curr, window)
    assert got == pytest.approx(pct_change(curr, float(np.median(window))))


def test_lag_changed():
    assert lag_changed("F_31", "F_31") is False
    assert lag_changed("F_31", "F_32") is True
    assert lag_changed(None, None) is False
    assert lag_changed(None, "x") is True
    assert lag_changed("x", None) is True


def test_days_between():
    assert days_between("2020-01-01", "2020-01-31") == 30
    assert days_between("2020-01-01", "2020-01-01") == 0
    assert days_between("2020-03-01", "2020-02-01") == -29  # leap year


@given(st.dates(), st.dates())
def test_days_between_antisymmetric(a, b):
    assert days_between(a.isoformat(), b.isoformat()) == \
        -days_between(b.isoformat(), a.isoformat())


# --- target encoder -------------------------------------------------------------

def test_encoder_closed_form():
    # categories A (label 1) and B (label 0): prior 0.5
    enc = fit_target_encoder(["A", "B"], [1, 0], m=1.0, k_folds=1)
    assert enc.prior == 0.5
    assert enc.encode("A") == pytest.approx((1 * 1.0 + 1 * 0.5) / 2)  # 0.75
    assert enc.encode("B") == pytest.approx((0.0 + 0.5) / 2)


def test_encoder_large_smoothing_limit():
    cats = ["A"] * 30 + ["B"] * 70
    labels = [1] * 30 + [0] * 70
    enc = fit_target_encoder(cats, labels, m=1e9, k_folds=5)
    assert enc.encode("A") == pytest.approx(enc.prior, abs=1e-6)
    assert enc.encode("B") == pytest.approx(enc.prior, abs=1e-6)


def test_encoder_unseen_is_prior_exactly():
    enc = fit_target_encoder(["A", "B", "A"], [1, 0, 1], m=10.0, k_folds=2)
    assert enc.encode("Z") == enc.prior


def test_encoder_bounds_and_errors():
    enc = fit_target_encoder(list("ABCAB"), [1, 0, 1, 0, 1], m=5.0, k_folds=3)
    for c in "ABCZ":
        assert 0.0 <= enc.encode(c) <= 1.0
    with pytest.raises(ValueError):
        fit_target_encoder([], [], m=1.0)
    with pytest.raises(ValueError):
        fit_target_encoder(["A"], [1], m=0.0)
    with pytest.raises(ValueError):
        fit_target_encoder(["A", "B"], [1], m=1.0)


def test_encoder_out_of_fold_excludes_own_fold():
    # oracle: recompute fold-excluded statistics directly
    cats = ["A", "A", "A", "B", "B", "B"]
    labels = [1, 0, 1, 0, 0, 1]
    enc = fit_target_encoder(cats, labels, m=2.0, k_folds=3, seed=0)
    for row, (c, y) in enumerate(zip(cats, labels)):
        f = enc.folds[row]
        keep = [i for i in range(len(cats)) if enc.folds[i] != f]
        n_c = sum(1 for i in keep if cats[i] == c)
        s_c = sum(labels[i] for i in keep if cats[i] == c)
        prior = (sum(labels[i] for i in keep) / len(keep)) if keep else enc.prior
        expect = (s_c + 2.0 * prior) / (n_c + 2.0)
        assert enc.encode_train(c, f) == pytest.approx(expect, abs=1e-12)


# --- matrix building -------------------------------------------------------------

@pytest.fixture(scope="module")
def gen_small():
    cfg = GenConfig(n_instruments=100, n_months=12, error_rate=0.08, seed=21)
    corpus = generate_universe(cfg)
    corrupted, gt, audits = inject_exceptions(corpus, cfg)
    labels = assemble_training(corrupted, audits, cutoff_month=corrupted.months[-1])
    return cfg, corrupted, gt, labels


def test_matrix_row_count(gen_small):
    _, corrupted, _, labels = gen_small
    matrix = build_matrix(corrupted, labels)
    assert matrix.n_rows == 100 * 9  # months 4..12
    assert matrix.base.shape == (900, len(matrix.base_schema))


def test_matrix_corrupted_amount_pct_matches_series(gen_small):
    _, corrupted, gt, labels = gen_small
    matrix = build_matrix(corrupted, labels)
    series = corrupted.by_instrument()
    col = matrix.base_schema.index("amount_outstanding__pct")
    checked = 0
    for (iid, month, t), entry in gt.entries.items():
        if t is not ExceptionType.AMOUNT_OUTSTANDING:
            continue
        i = matrix.keys.index((iid, month))
        snaps = series[iid]
        mi = corrupted.months.index(month)
        prev = snaps[mi - 1].amount_outstanding
        expect = pct_change(entry.corrupted_value, prev)
        assert matrix.base[i, col] == pytest.approx(expect, rel=1e-12)
        prev_month = corrupted.months[mi - 1]
        prev_clean = (iid, prev_month, t) not in gt.entries
        if prev_clean and entry.corrupted_value == pytest.approx(
                entry.clean_value * 10.0, rel=1e-6):
            assert 7.0 < matrix.base[i, col] <= CLAMP
            checked += 1
    assert checked > 0


def test_matrix_deterministic(gen_small):
    _, corrupted, _, labels = gen_small
    a = build_matrix(corrupted, labels)
    b = build_matrix(corrupted, labels)
    assert np.array_equal(a.base, b.base)
    assert a.keys == b.keys


def test_no_future_leakage_in_features(gen_small):
    # mutating the last month's values must leave earlier rows untouched
    _, corrupted, _, labels = gen_small
    ref = build_matrix(corrupted, labels)
    from dataclasses import replace

    last = corrupted.months[-1]
    mutated = [replace(s, price=s.price * 7.7) if s.ref_month == last else s
               for s in corrupted.snapshots]
    from dqx.types import Corpus

    corpus2 = Corpus(snapshots=mutated, registry=corrupted.registry,
                     months=corrupted.months)
    other = build_matrix(corpus2, labels)
    early = [i for i, (_, m) in enumerate(ref.keys) if m != last]
    assert np.array_equal(ref.base[early], other.base[early])


def test_temporal_split_even_months():
    cfg = GenConfig(n_instruments=50, n_months=13, seed=22)  # 10 matrix months
    corpus = generate_universe(cfg)
    matrix = build_matrix(corpus, empty_labels())
    temporal_split(matrix)
    months = sorted(set(m for _, m in matrix.keys))
    assert len(months) == 10
    tags = {m: set(matrix.split[[i for i, (_, mm) in enumerate(matrix.keys) if mm == m]])
            for m in months}
    for m, ts in tags.items():
        assert len(ts) == 1  # whole months share a tag
    seq = [next(iter(tags[m])) for m in months]
    assert seq == [SPLIT_TRAIN] * 6 + [SPLIT_VAL] * 2 + [SPLIT_TEST] * 2


def test_temporal_split_ordering_invariant(gen_small):
    _, corrupted, _, labels = gen_small
    matrix = temporal_split(build_matrix(corrupted, labels))
    month_tag = {}
    for (iid, m), tag in zip(matrix.keys, matrix.split):
        month_tag.setdefault(m, int(tag))
    train = [m for m, t in month_tag.items() if t == SPLIT_TRAIN]
    val = [m for m, t in month_tag.items() if t == SPLIT_VAL]
    test = [m for m, t in month_tag.items() if t == SPLIT_TEST]
    assert max(train) < min(val) < min(test)


def test_temporal_split_nine_equal_months_picks_l1_minimum():
    # independent enumeration oracle over month boundaries
    cfg = GenConfig(n_instruments=40, n_months=12, seed=23)  # 9 matrix months
    corpus = generate_universe(cfg)
    matrix = temporal_split(build_matrix(corpus, empty_labels()))
    months = sorted(set(m for _, m in matrix.keys))
    counts = np.array([sum(1 for _, m in matrix.keys if m == mm) for mm in months],
                      dtype=float)
    total = counts.sum()
    best, best_cut = None, None
    for i in range(1, len(months) - 1):
        for j in range(i + 1, len(months)):
            props = (counts[:i].sum() / total, counts[i:j].sum() / total,
                     counts[j:].sum() / total)
            d = abs(props[0] - .6) + abs(props[1] - .2) + abs(props[2] - .2)
            if best is None or d < best - 1e-12:
                best, best_cut = d, (i, j)
    assert best_cut == (5, 7)  # 5/2/2 months for 9 equal months
    month_tag = {m: int(matrix.split[[k for k, (_, mm) in enumerate(matrix.keys)
                                      if mm == m][0]]) for m in months}
    got_cut = (sum(1 for m in months if month_tag[m] == SPLIT_TRAIN),
               sum(1 for m in months if month_tag[m] == SPLIT_VAL))
    assert got_cut == (5, 2)


def test_temporal_split_needs_three_months():
    cfg = GenConfig(n_instruments=20, n_months=5, seed=24)  # 2 matrix months
    corpus = generate_universe(cfg)
    with pytest.raises(ValueError):
        temporal_split(build_matrix(corpus, empty_labels()))


def test_gold_flags_mark_idqm_test_rows(gen_small):
    _, corrupted, _, labels = gen_small
    matrix = featurize(corrupted, labels, seed=21)
    for t in ExceptionType:
        flagged = np.flatnonzero(matrix.gold[t])
        for i in flagged:
            assert matrix.split[i] == SPLIT_TEST
            assert matrix.sources[t][i] == "iDQM"
        pool = matrix.gold_mask(t)
        # gold pool never contains a bulk-sourced positive
        bulk_pos = (matrix.sources[t] == "bulk") & (matrix.labels[t] == 1)
        assert not (pool & bulk_pos).any()


def test_featurize_schema_and_eligibility(gen_small):
    _, corrupted, _, labels = gen_small
    matrix = featurize(corrupted, labels, seed=21)
    for t in ExceptionType:
        X = matrix.matrix_for(t)
        schema = matrix.type_schema(t)
        assert X.shape[1] == len(schema)
        assert len(matrix.type_schema_hash(t)) == 16
        # encoded columns are probabilities
        enc_block = matrix.encoded[t]
        assert enc_block.min() >= 0.0 and enc_block.max() <= 1.0
    # dividend task applies only to dividend payers
    t = ExceptionType.DIVIDEND_AMOUNT
    col = matrix.base_schema.index("dividend_amount__missing")
    assert not matrix.base[matrix.eligible[t], col].any()


def test_matrix_roundtrip(tmp_path, gen_small):
    _, corrupted, _, labels = gen_small
    matrix = featurize(corrupted, labels, seed=21)
    save_matrix(matrix, tmp_path / "m.csv", tmp_path / "m.json")
    loaded = load_matrix(tmp_path / "m.csv", tmp_path / "m.json")
    assert loaded.keys == matrix.keys
    assert np.array_equal(loaded.base, matrix.base)
    assert np.array_equal(loaded.split, matrix.split)
    for t in ExceptionType:
        assert np.array_equal(loaded.encoded[t], matrix.encoded[t])
        assert np.array_equal(loaded.labels[t], matrix.labels[t])
        assert loaded.type_schema_hash(t) == matrix.type_schema_hash(t)
    # save -> load -> save is byte-stable
    save_matrix(loaded, tmp_path / "m2.csv", tmp_path / "m2.json")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
