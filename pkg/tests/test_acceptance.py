"""Acceptance checks, one per criterion.

Each test prints a single ``PASS <criterion>`` or ``FAIL <criterion>`` line
and then asserts.  Run directly with ``python3 tests/test_acceptance.py``
or through pytest.
"""

import asyncio
import dataclasses
import math
import random
import sys
import time
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from mintchain import crypto
from mintchain.audit import all_passed, audit_period
from mintchain.bank import prune_chains, verify_higher_block
from mintchain.client import Wallet, message_budget
from mintchain.core import Output, Transaction, TxKind, make_tx
from mintchain.fx import ExchangeTerms, OutcomeKind, enumerate_outcomes, run_exchange
from mintchain.mintette import GENESIS_BLOCK_HASH, DoubleSpendEvidence, verify_lower_block, verify_lower_chain
from mintchain.net.behaviours import Behaviour
from mintchain.net.bench import throughput_sweep
from mintchain.net.scenarios import MISBEHAVIOURS, honest_period
from mintchain.net.sim import SimConfig, run_scenario
from mintchain.net.sockets import SocketNetwork
from mintchain.sharding import ShardMap, monte_carlo_security, shard_security_probability

_printer = print


def verdict(name, ok, detail=""):
    _printer(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    assert ok, detail


@pytest.fixture(autouse=True)
def _report_to_terminal(request):
    # verdict lines bypass output capture so they appear in every run
    global _printer
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        _printer = lambda line: (reporter.ensure_newline(), reporter.write_line(line))
    yield
    _printer = print


# -- 1 --------------------------------------------------------------------------------

DISHONEST = [Behaviour.ACCEPT_DOUBLE_SPEND, Behaviour.SILENT, Behaviour.STALE_VOTE, Behaviour.FORK_LOG]


def conflicting_pairs(blocks):
    spent = Counter()
    for block in blocks:
        for tx in block.txset:
            spent.update(tx.addr_ids)
    return sum(n - 1 for n in spent.values() if n > 1)


def test_double_spend_safety():
    t0 = time.perf_counter()
    runs = conflicts = attempted = aborted = 0
    for seed in range(102):
        m = (3, 6, 9)[seed % 3]
        rng = random.Random(seed)
        # shards are consecutive groups of Q; one bad member per shard
        bad = {s * 3 + rng.randrange(3): DISHONEST[(seed + s) % 4] for s in range(m // 3)}
        if seed % 4 == 0:
            bad = {i: Behaviour.ACCEPT_DOUBLE_SPEND for i in bad}
        cfg = SimConfig(
            seed=seed, mintettes=m, shard_size=3, clients=10, txs_per_client=8, periods=2,
            double_spend_fraction=0.2, behaviours=bad, latency_ms=1, latency_max_ms=10,
        )
        res = run_scenario(cfg)
        runs += 1
        conflicts += conflicting_pairs(res.blocks)
        attempted += sum(1 for line in res.trace if line.startswith("submit"))
        aborted += res.bench.aborted
    elapsed = time.perf_counter() - t0
    verdict(
        "1 double-spend safety",
        runs >= 100 and conflicts == 0 and aborted > 0 and elapsed <= 120,
        f"{runs} runs, {aborted} aborted, {conflicts} conflicting pairs sealed, {elapsed:.1f}s",
    )


# -- 2 --------------------------------------------------------------------------------


def binomial_oracle(alpha, q, y):
    k = (q - 1) // 2
    return sum(math.comb(q, i) * alpha**i * (1 - alpha) ** (q - i) for i in range(k + 1)) ** y


def test_shard_security_formula():
    worst = max(
        abs(shard_security_probability(a / 100, q, y) - binomial_oracle(a / 100, q, y))
        for a in range(0, 51, 5)
        for q in (3, 5, 7)
        for y in (1, 10, 100)
    )
    rho = binomial_oracle(0.1, 3, 1)
    closed = shard_security_probability(0.1, 3, 10)
    p, se = monte_carlo_security(0.1, 3, 10, trials=100_000, rng=np.random.default_rng(7))
    ok = worst <= 1e-9 and abs(rho - 0.972) < 1e-12 and abs(closed - 0.7528) < 5e-5 and abs(p - closed) <= 3 * se
    verdict(
        "2 shard security closed form",
        ok,
        f"max |closed-oracle|={worst:.1e}, rho={rho:.3f}, closed={closed:.4f}, MC={p:.4f}±{se:.4f}",
    )


# -- 3 --------------------------------------------------------------------------------


def test_message_budget():
    details, ok = [], True
    for m in (1, 2, 3):
        for sc in (False, True):
            cfg = SimConfig(
                seed=m, mintettes=9, clients=6, txs_per_client=4, inputs_per_tx=m,
                initial_coins=3 * m + 3, short_circuit=sc,
            )
            res = run_scenario(cfg)
            budget = message_budget(m, 3)
            counts = [r.first_attempt_messages for r in res.receipts]
            if sc:
                ok &= bool(counts) and max(counts) <= budget
            else:
                ok &= bool(counts) and set(counts) == {budget} and budget == 2 * (m + 1) * 3
            details.append(f"m={m}{' sc' if sc else ''}:{min(counts)}-{max(counts)}/{budget}")
    verdict("3 message budget", ok, ", ".join(details))


# -- 4 --------------------------------------------------------------------------------


def test_throughput_scaling():
    t0 = time.perf_counter()
    sweep = throughput_sweep([3, 6, 9, 12], 3)
    flat = throughput_sweep([3, 4, 5], 3)
    elapsed = time.perf_counter() - t0
    tps = [p.steady_throughput for p in flat.points]
    spread = max(tps) / min(tps) - 1
    ok = sweep.r_squared >= 0.95 and sweep.slope > 0 and spread <= 0.10 and elapsed <= 60
    curve = ", ".join(f"M={p.mintettes}:{p.steady_throughput:.0f}" for p in sweep.points)
    verdict(
        "4 throughput scaling",
        ok,
        f"{curve}; slope={sweep.slope:.1f}/mintette R2={sweep.r_squared:.3f}; M=3..5 spread={spread:.1%}; {elapsed:.1f}s",
    )


# -- 5 --------------------------------------------------------------------------------


async def socket_latencies(n=5):
    users = [Wallet(crypto.keygen(b"acc/u%d" % i, "test")) for i in range(2)]
    async with SocketNetwork.create(9, 3, seed=b"acc") as net:
        await net.start([(users[0].address, 10) for _ in range(2 * n)])
        for tx in net.bank.chain[0].txset:
            users[0].receive(tx)
        coins = sorted(users[0].coins)
        out = []
        for i in range(n):
            tx = users[0].pay(users[1].address, 20, inputs=coins[2 * i : 2 * i + 2])
            t = time.perf_counter()
            r = await net.submit(tx, short_circuit=False)
            out.append((time.perf_counter() - t, r))
        return out


def test_latency():
    cfg = SimConfig(clients=4, txs_per_client=5, latency_ms=25, query_service_us=0, commit_service_us=0)
    totals = run_scenario(cfg).bench.total_ms
    sim_ok = bool(totals) and all(abs(t - 100) <= 1 for t in totals)
    measured = asyncio.run(socket_latencies())
    sock_ok = all(r.sealed and r.messages == 2 * 3 * 3 and dt < 0.5 for dt, r in measured)
    worst = max(dt for dt, _ in measured)
    verdict(
        "5 latency",
        sim_ok and sock_ok,
        f"sim total {min(totals):.1f}-{max(totals):.1f} ms; socket 2PC worst {worst * 1000:.1f} ms",
    )


# -- 6 --------------------------------------------------------------------------------


def test_audit():
    caught = []
    for name, make in MISBEHAVIOURS.items():
        sc = make()
        reports = audit_period(sc.archive, sc.bank_pk, sc.receipts)
        findings = [f for r in reports for f in r.findings]
        blamed = set().union(*(f.implicated for f in findings)) if findings else set()
        hit = any(f.kind == sc.expected for f in findings) and blamed == {sc.culprit}
        caught.append((name, hit, sorted(blamed)))
    false_pos = 0
    for seed in range(100):
        cfg = SimConfig(
            seed=seed, mintettes=(3, 6, 9)[seed % 3], clients=6, txs_per_client=4,
            latency_ms=1, latency_max_ms=15, double_spend_fraction=0.2 if seed % 2 else 0.0,
        )
        res = run_scenario(cfg)
        false_pos += sum(not all_passed(audit_period(a, res.bank.pk, res.receipts)) for a in res.archives)
    ok = all(hit for _, hit, _ in caught) and false_pos == 0
    verdict(
        "6 audit",
        ok,
        "; ".join(f"{n}->{','.join(b)}" for n, _, b in caught) + f"; {false_pos} false positives in 100 honest seeds",
    )


# -- 7 --------------------------------------------------------------------------------

OWNERS = [crypto.keygen(b"acc/o%d" % i, "test") for i in range(4)]
BANK = crypto.keygen(b"acc/bank", "test")


def random_dag(rng):
    base = Transaction(TxKind.COIN_GENERATION, (), tuple(Output(OWNERS[i % 4].pk, 50) for i in range(8)), b"base")
    keys = {k.pk: k for k in OWNERS}
    unspent = list(zip(base.output_ids(), base.outputs))
    txs = []
    for i in range(rng.randint(1, 50)):
        if not unspent:
            break
        spent = [unspent.pop(rng.randrange(len(unspent))) for _ in range(min(len(unspent), rng.randint(1, 3)))]
        total = sum(a.value for a, _ in spent)
        cuts = sorted(rng.randint(0, total) for _ in range(rng.randint(0, 2)))
        values = [b - a for a, b in zip([0, *cuts], [*cuts, total])]
        tx = make_tx([(a, keys[o.addr]) for a, o in spent], [(rng.choice(OWNERS).pk, v) for v in values], memo=b"%d" % i)
        txs.append(tx)
        unspent += list(zip(tx.output_ids(), tx.outputs))
    return base, txs


def fold_balances(base, txs):
    live = dict(zip(base.output_ids(), base.outputs))
    pending = list(txs)
    while pending:
        # apply in any order the inputs allow
        ready = [tx for tx in pending if all(a in live for a in tx.addr_ids)]
        assert ready, "transactions spend unknown outputs"
        for tx in ready:
            for a in tx.addr_ids:
                del live[a]
            live.update(zip(tx.output_ids(), tx.outputs))
            pending.remove(tx)
    bal = Counter()
    for o in live.values():
        if o.value:
            bal[o.addr] += o.value
    return bal


def test_pruning():
    mismatched = leftover = collapsed = 0
    for seed in range(200):
        base, txs = random_dag(random.Random(seed))
        pruned, _ = prune_chains(txs, BANK)
        mismatched += fold_balances(base, pruned) != fold_balances(base, txs)
        made = {a for tx in pruned for a in tx.output_ids()}
        leftover += sum(a in made for tx in pruned for a in tx.addr_ids)
        collapsed += len(txs) - len(pruned)
    verdict(
        "7 pruning",
        mismatched == 0 and leftover == 0 and collapsed > 0,
        f"200 DAGs, {mismatched} balance mismatches, {leftover} consumed intermediates left, {collapsed} txs collapsed",
    )


# -- 8 --------------------------------------------------------------------------------


def test_fair_exchange():
    terms = ExchangeTerms("gbp", "usd", 30, 40, t1=6, t2=4)
    outcomes = enumerate_outcomes(terms)
    kinds = Counter(o.kind for o in outcomes)
    one_sided = sum(o.kind is OutcomeKind.UNFAIR for o in outcomes)
    rejected = []
    for t1, t2 in ((4, 4), (3, 5)):
        try:
            run_exchange(ExchangeTerms("gbp", "usd", 1, 1, t1, t2))
        except ValueError:
            rejected.append((t1, t2))
    ok = set(kinds) <= {OutcomeKind.EXCHANGED, OutcomeKind.REFUNDED} and one_sided == 0 and len(rejected) == 2
    verdict(
        "8 fair exchange",
        ok,
        f"{len(outcomes)} runs: {kinds[OutcomeKind.EXCHANGED]} exchanged, {kinds[OutcomeKind.REFUNDED]} refunded, "
        f"{one_sided} one-sided; t2>=t1 rejected {len(rejected)}/2",
    )


# -- 9 --------------------------------------------------------------------------------


def mutations(value, sample_tx, sample_ev):
    """Every way this module tampers with one field's value."""
    if isinstance(value, bool):
        return [not value]
    if isinstance(value, int):
        return [value + 1] + ([value - 1] if value else [])
    if isinstance(value, str):
        return [value + "x"]
    if isinstance(value, bytes):
        return [bytes([value[0] ^ 1]) + value[1:], value[:-1]] if value else [b"\x00"]
    if isinstance(value, ShardMap):
        out = [replace(value, period=value.period + 1)]
        first = value.mintettes[0]
        forged = replace(first, bank_sig=bytes([first.bank_sig[0] ^ 1]) + first.bank_sig[1:])
        out.append(replace(value, mintettes=(forged,) + value.mintettes[1:]))
        out.append(replace(value, shards=tuple(tuple(reversed(s)) for s in reversed(value.shards))))
        return out
    if isinstance(value, tuple):
        out = [value[:-1]] if value else []
        if value and isinstance(value[0], bytes):
            out.append(value + (value[0],))
        elif value and isinstance(value[0], Transaction):
            out.append(value + (sample_tx,))
        else:
            out.append(value + (sample_ev,))
        return out
    raise TypeError(type(value))


def test_block_validity():
    res = run_scenario(SimConfig(seed=5, mintettes=6, clients=6, txs_per_client=5, epoch_entries=8))
    archive = res.archives[0]
    pl, bank_pk = archive.logs, res.bank.pk
    honest = verify_higher_block(archive.block, pl.prev_bank_hash, bank_pk)
    chains = pl.blocks_by_mintette()
    honest = honest and all(verify_lower_chain(bs, pl.prev_bank_hash, pl.shard_map, bank_pk) for bs in chains.values())

    lower = next(b for bs in chains.values() for b in bs[:1] if b.txset and b.mset)
    tx = lower.txset[0]
    other = next(t for t in archive.block.txset if t.hash != tx.hash)
    ev = DoubleSpendEvidence(tx.addr_ids[0], tx, other)
    survived, tried = [], 0
    for f in dataclasses.fields(lower):
        for bad in mutations(getattr(lower, f.name), other, ev):
            tried += 1
            if verify_lower_block(replace(lower, **{f.name: bad}), pl.prev_bank_hash, GENESIS_BLOCK_HASH, pl.shard_map, bank_pk):
                survived.append(f"lower.{f.name}")
    higher = archive.block
    for f in dataclasses.fields(higher):
        for bad in mutations(getattr(higher, f.name), tx, ev):
            tried += 1
            try:
                mutated = replace(higher, **{f.name: bad})
            except ValueError:
                continue
            if verify_higher_block(mutated, pl.prev_bank_hash, bank_pk):
                survived.append(f"higher.{f.name}")
    verdict(
        "9 block validity",
        bool(honest) and not survived,
        f"honest blocks verify: {bool(honest)}; {tried} single-field mutations, {len(survived)} accepted {survived or ''}".rstrip(),
    )


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
