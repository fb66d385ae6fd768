import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mintchain.audit import (
    CausalIndex,
    Order,
    BANK,
    all_passed,
    audit_period,
    personal_audit,
    universal_audit,
)
from mintchain.net.scenarios import MISBEHAVIOURS, honest_period
from mintchain.net.sim import SimConfig, run_scenario


@pytest.fixture(scope="module")
def scenarios():
    return {name: make() for name, make in MISBEHAVIOURS.items()}


@pytest.mark.parametrize("name", sorted(MISBEHAVIOURS))
def test_misbehaviour_detected_with_culprit(scenarios, name):
    sc = scenarios[name]
    reports = audit_period(sc.archive, sc.bank_pk, sc.receipts)
    assert not all_passed(reports)
    findings = [f for r in reports for f in r.findings]
    hits = [f for f in findings if f.kind == sc.expected]
    assert hits, [f.kind for f in findings]
    assert all(sc.culprit in f.implicated for f in hits)
    # nobody else is blamed for the planted fault
    blamed = set().union(*(f.implicated for f in findings))
    assert blamed == {sc.culprit}


def test_bank_culprit_is_named_bank(scenarios):
    assert scenarios["bank-omission"].culprit == BANK


@pytest.mark.parametrize("tag", [b"h%d" % i for i in range(8)])
def test_honest_local_periods_pass(tag):
    sc = honest_period(tag)
    reports = audit_period(sc.archive, sc.bank_pk, sc.receipts)
    assert all_passed(reports), [f for r in reports for f in r.findings]


@pytest.fixture(scope="module")
def sim_run():
    cfg = SimConfig(seed=3, mintettes=6, clients=6, txs_per_client=6, latency_ms=5, latency_max_ms=20)
    return run_scenario(cfg)


def test_honest_sim_period_passes(sim_run):
    archive = sim_run.archives[0]
    assert all_passed(audit_period(archive, sim_run.bank.pk, sim_run.receipts))


def test_happened_before_respects_simulated_time(sim_run):
    logs = sim_run.archives[0].logs.log_map()
    times = sim_run.log_times[0]
    idx = CausalIndex(logs)
    entries = [(m, s) for m in idx.ids for s in range(1, len(logs[m]) + 1)]
    ordered = 0
    for a in entries[::3]:
        for b in entries[::5]:
            if idx.happened_before(a, b) is Order.BEFORE:
                ordered += 1
                assert times[a[0]][a[1] - 1] <= times[b[0]][b[1] - 1]
    assert ordered > 0


def test_cross_log_ordering_is_found(sim_run):
    logs = sim_run.archives[0].logs.log_map()
    idx = CausalIndex(logs)
    m0, m1 = idx.ids[:2]
    assert any(idx.clock(m1, s)[idx.col[m0]] > 0 for s in range(1, len(logs[m1]) + 1))


@given(st.data())
def test_order_is_antisymmetric(sim_run, data):
    logs = sim_run.archives[0].logs.log_map()
    idx = CausalIndex(logs)
    pick = st.sampled_from([(m, s) for m in idx.ids for s in range(1, len(logs[m]) + 1)])
    a, b = data.draw(pick), data.draw(pick)
    flip = {Order.BEFORE: Order.AFTER, Order.AFTER: Order.BEFORE}
    ab, ba = idx.happened_before(a, b), idx.happened_before(b, a)
    assert ba == flip.get(ab, ab)


def test_tampered_log_entry_breaks_personal_audit():
    sc = honest_period(b"tamper")
    logs = dict(sc.archive.logs.log_map())
    mid = sorted(logs)[0]
    logs[mid] = list(logs[mid])[1:]
    report = personal_audit(sc.receipts, logs, sc.archive.logs.shard_map)
    assert not report.passed and report.implicated() == {mid}


def test_tampered_block_fails_universal_audit():
    sc = honest_period(b"tamper2")
    block = dataclasses.replace(sc.archive.block, txset=sc.archive.block.txset[:-1])
    archive = dataclasses.replace(sc.archive, block=block)
    report = universal_audit(archive, sc.bank_pk)
    assert not report.passed and BANK in report.implicated()


def test_report_serialises(scenarios):
    sc = scenarios["log-fork"]
    d = [r.to_dict() for r in audit_period(sc.archive, sc.bank_pk, sc.receipts)]
    assert any(x["verdict"] == "fail" for x in d)
