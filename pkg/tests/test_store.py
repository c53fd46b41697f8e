import pytest

from dqx.datagen import GenConfig, generate_universe
from dqx.store import AuditRecord, AuditStore, assemble_training, gold_subset
from dqx.types import ExceptionType

T = ExceptionType.AMOUNT_OUTSTANDING


def rec(iid="DE0000000001", month="2019-05", field="amount_outstanding",
        before=1_000_000.0, after=100_000.0, t=T, source="iDQM",
        action="correct", ts="2019-05-28T12:00:00+00:00"):
    return AuditRecord(audit_id=-1, instrument_id=iid, ref_month=month,
                       field=field, before=before, after=after,
                       exception_type=t, source=source, actor="dqm01",
                       timestamp=ts, action=action)


def test_append_assigns_monotonic_ids(tmp_path):
    store = AuditStore(tmp_path / "audit.log")
    a = store.append(rec())
    b = store.append(rec(month="2019-06"))
    assert (a, b) == (0, 1)
    assert b == a + 1
    assert [r.audit_id for r in store.records()] == [0, 1]
    store.close()


def test_invariants_enforced(tmp_path):
    store = AuditStore(tmp_path / "audit.log")
    with pytest.raises(ValueError):
        store.append(rec(before=5.0, after=5.0, action="correct"))
    with pytest.raises(ValueError):
        store.append(rec(before=5.0, after=6.0, action="confirm"))
    with pytest.raises(ValueError):
        store.append(rec(source="fax"))
    with pytest.raises(ValueError):
        store.append(rec(action="shrug"))
    # confirm with before == after is fine
    store.append(rec(before=5.0, after=5.0, action="confirm"))
    assert len(store) == 1
    store.close()


def test_roundtrip_preserves_order(tmp_path):
    path = tmp_path / "audit.log"
    store = AuditStore(path)
    months = [f"2019-{m:02d}" for m in range(1, 10)]
    for m in months:
        store.append(rec(month=m))
    store.close()
    reopened = AuditStore(path)
    assert [r.ref_month for r in reopened.records()] == months
    assert reopened.next_id == 9
    reopened.close()


def test_crash_recovery_truncates_torn_tail(tmp_path):
    path = tmp_path / "audit.log"
    store = AuditStore(path)
    for m in ("2019-01", "2019-02", "2019-03"):
        store.append(rec(month=m))
    store.close()
    raw = path.read_bytes()
    # cut the last record in half, simulating a crash mid-write
    lines = raw.splitlines(keepends=True)
    path.write_bytes(b"".join(lines[:2]) + lines[2][: len(lines[2]) // 2])
    recovered = AuditStore(path)
    assert [r.ref_month for r in recovered.records()] == ["2019-01", "2019-02"]
    # appends continue cleanly after truncation
    new_id = recovered.append(rec(month="2019-04"))
    assert new_id == 2
    recovered.close()
    reread = AuditStore(path)
    assert [r.ref_month for r in reread.records()] == ["2019-01", "2019-02", "2019-04"]
    reread.close()


def test_gold_subset():
    audits = [rec(source="bulk", month="2019-01"),
              rec(source="iDQM", month="2019-02"),
              rec(source="bulk", month="2019-03"),
              rec(source="iDQM", month="2019-04")]
    for i, a in enumerate(audits):
        object.__setattr__(a, "audit_id", i)
    assert gold_subset([]) == []
    assert gold_subset(audits[:1]) == []
    gold = gold_subset(audits)
    assert [g.ref_month for g in gold] == ["2019-02", "2019-04"]


@pytest.fixture(scope="module")
def corpus():
    return generate_universe(GenConfig(n_instruments=40, n_months=8, seed=55))


def test_assemble_training_labels(corpus):
    iid = corpus.snapshots[0].instrument_id
    audits = [rec(iid=iid, month="2019-05")]
    object.__setattr__(audits[0], "audit_id", 0)
    ls = assemble_training(corpus, audits, cutoff_month="2019-08")
    assert ls.labels[T] == {(iid, "2019-05"): 1}
    assert ls.sources[T][(iid, "2019-05")] == "iDQM"
    assert ls.skipped_unknown == 0


def test_assemble_latest_action_wins(corpus):
    iid = corpus.snapshots[0].instrument_id
    confirm = rec(iid=iid, month="2019-05", before=5.0, after=5.0, action="confirm")
    correct = rec(iid=iid, month="2019-05")
    object.__setattr__(confirm, "audit_id", 0)
    object.__setattr__(correct, "audit_id", 1)
    ls = assemble_training(corpus, [confirm, correct], cutoff_month="2019-08")
    assert ls.labels[T][(iid, "2019-05")] == 1  # confirm then correct -> 1
    # reversed ids: correct then confirm -> 0
    object.__setattr__(confirm, "audit_id", 2)
    ls = assemble_training(corpus, [correct, confirm], cutoff_month="2019-08")
    assert ls.labels[T][(iid, "2019-05")] == 0
    # confirmations can be ignored entirely
    ls = assemble_training(corpus, [correct, confirm], cutoff_month="2019-08",
                           use_confirms=False)
    assert ls.labels[T][(iid, "2019-05")] == 1


def test_assemble_cutoff_causality(corpus):
    iid = corpus.snapshots[0].instrument_id
    early = rec(iid=iid, month="2019-04")
    late = rec(iid=iid, month="2019-07")
    object.__setattr__(early, "audit_id", 0)
    object.__setattr__(late, "audit_id", 1)
    ls = assemble_training(corpus, [early, late], cutoff_month="2019-05")
    assert (iid, "2019-07") not in ls.labels[T]
    assert ls.labels[T] == {(iid, "2019-04"): 1}
    # output is invariant to audits dated after the cutoff
    ls2 = assemble_training(corpus, [early], cutoff_month="2019-05")
    assert ls.labels == ls2.labels


def test_assemble_skips_unknown_instruments(corpus):
    ghost = rec(iid="XX9999999999", month="2019-05")
    object.__setattr__(ghost, "audit_id", 0)
    ls = assemble_training(corpus, [ghost], cutoff_month="2019-08")
    assert ls.skipped_unknown == 1
    assert ls.labels[T] == {}


def test_feedback_loop_growth(corpus):
    iid1 = corpus.snapshots[0].instrument_id
    iid2 = corpus.snapshots[10].instrument_id
    a = rec(iid=iid1, month="2019-05")
    b = rec(iid=iid2, month="2019-06")
    object.__setattr__(a, "audit_id", 0)
    object.__setattr__(b, "audit_id", 1)
    ls1 = assemble_training(corpus, [a], cutoff_month="2019-08")
    ls2 = assemble_training(corpus, [a, b], cutoff_month="2019-08")
    pos1 = sum(ls1.labels[T].values())
    pos2 = sum(ls2.labels[T].values())
    assert pos2 == pos1 + 1


def test_csv_export(tmp_path):
    store = AuditStore(tmp_path / "audit.log")
    store.append(rec())
    store.append(rec(month="2019-06", source="bulk"))
    out = tmp_path / "audits.csv"
    store.export_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("audit_id,instrument_id,ref_month")
    assert len(lines) == 3
    store.close()
