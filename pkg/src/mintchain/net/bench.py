"""Throughput sweeps, latency profiles and service-cost micro-benchmarks."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import crypto
from ..client import Wallet
from ..core import Output, Transaction, TxKind, make_tx
from ..messages import CommitReq, QueryReq, dispatch
from ..mintette import EvidenceBundle, Mintette
from ..sharding import build_shard_map
from .sim import BenchResult, SimConfig, run_scenario


@dataclass
class SweepPoint:
    mintettes: int
    shards: int
    throughput: float
    throughput_p90: float
    throughput_stderr: float
    steady_throughput: float


@dataclass
class Sweep:
    shard_size: int
    points: list[SweepPoint]
    # least-squares line of steady throughput over the points with M > Q
    slope: float = 0.0
    intercept: float = 0.0
    r_squared: float = 0.0
    fit_ms: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float, float]:
    """Slope, intercept and R² of the least-squares line through (xs, ys)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two points to fit a line")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def throughput_sweep(ms: Sequence[int], q: int, load: Optional[SimConfig] = None) -> Sweep:
    """Run one scenario per M with identical traffic and fit M > Q."""
    base = load or SimConfig(clients=96, txs_per_client=12, latency_ms=2.0)
    points = []
    for m in ms:
        res = run_scenario(replace(base, mintettes=m, shard_size=q))
        b = res.bench
        points.append(
            SweepPoint(m, m // q, b.throughput, b.throughput_p90, b.throughput_stderr, b.steady_throughput)
        )
    sweep = Sweep(q, points)
    fit = [p for p in points if p.mintettes > q]
    if len(fit) >= 2:
        sweep.slope, sweep.intercept, sweep.r_squared = linear_fit(
            [p.mintettes for p in fit], [p.steady_throughput for p in fit]
        )
        sweep.fit_ms = [p.mintettes for p in fit]
    return sweep


@dataclass
class LatencyProfile:
    latency_ms: float
    inputs: int
    phase1_ms: list[float]
    phase2_ms: list[float]
    total_ms: list[float]

    def summary(self) -> dict:
        out = {"latency_ms": self.latency_ms, "inputs": self.inputs}
        for name in ("phase1_ms", "phase2_ms", "total_ms"):
            v = np.asarray(getattr(self, name))
            out[name] = {
                "mean": float(v.mean()) if v.size else 0.0,
                "p50": float(np.percentile(v, 50)) if v.size else 0.0,
                "p90": float(np.percentile(v, 90)) if v.size else 0.0,
            }
        return out


def latency_profile(config: SimConfig) -> LatencyProfile:
    """Per-phase 2PC latency; light load so queueing stays out of the picture."""
    b = run_scenario(config).bench
    return LatencyProfile(config.latency_ms, config.inputs_per_tx, b.phase1_ms, b.phase2_ms, b.total_ms)


def measure_service_costs(samples: int = 200, scheme: str = "ed25519") -> dict[str, float]:
    """Wall-clock microseconds per QueryReq and CommitReq on this machine.

    Useful for seeding the simulator's service costs; results depend on
    hardware and are never used as pass/fail targets.
    """
    bank = crypto.keygen(b"bench/bank", scheme)
    ids = [(f"m{i}", crypto.keygen(b"bench/m%d" % i, scheme)) for i in range(3)]
    smap = build_shard_map(1, [(mid, kp.pk) for mid, kp in ids], 3, bank)
    users = [Wallet(crypto.keygen(b"bench/u%d" % i, scheme)) for i in range(2)]
    gens = [
        Transaction(TxKind.COIN_GENERATION, (), (Output(users[0].address, 10),), b"g%d" % i)
        for i in range(samples)
    ]
    utxo = {g.output_ids()[0]: g.outputs[0] for g in gens}
    nodes = [Mintette(mid, kp) for mid, kp in ids]
    for n in nodes:
        n.begin_period(smap, b"\x00" * 32, utxo)
    txs = [make_tx([(g.output_ids()[0], users[0].keypair)], [(users[1].address, 10)]) for g in gens]

    t0 = time.perf_counter()
    votes = []
    for tx in txs:
        a = tx.addr_ids[0]
        owners = smap.owners(a)
        vs = {}
        for n in nodes:
            if n.id in owners:
                vs[(n.id, a)] = dispatch(n, QueryReq(tx, a)).result
        votes.append(vs)
    t1 = time.perf_counter()
    per_query = (t1 - t0) / (samples * 3) * 1e6
    t0 = time.perf_counter()
    for tx, vs in zip(txs, votes):
        bundle = EvidenceBundle.from_votes(vs)
        for n in nodes:
            dispatch(n, CommitReq(tx, 1, bundle))
    t1 = time.perf_counter()
    per_commit = (t1 - t0) / (samples * 3) * 1e6
    return {"query_us": per_query, "commit_us": per_commit, "scheme": scheme}


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def bench_result_dict(result: BenchResult) -> dict:
    return result.to_dict()
