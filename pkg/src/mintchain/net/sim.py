"""Deterministic discrete-event simulator for whole periods of traffic.

Time is an integer count of microseconds.  Mintettes are FIFO single
servers with a fixed service cost per request kind; links add a sampled
latency and may drop messages.  Clients run the same validation generator
as every other transport.  Equal seed and config give an identical trace.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import crypto
from ..bank import Bank, PeriodArchive
from ..client import TxReceipt, Wallet, check_budget, validation_steps
from ..core import AddrId, Transaction
from ..encoding import decode, encode
from ..messages import CommitReq, EndPeriodReq, NewPeriodReq, QueryReq, UtxoEntry, dispatch
from ..mintette import EpochPolicy, Mintette
from .behaviours import BEHAVIOURS, Behaviour, is_silent

MS = 1000
SECOND = 1_000_000


@dataclass
class SimConfig:
    seed: int = 0
    mintettes: int = 3
    shard_size: int = 3
    clients: int = 10
    txs_per_client: int = 20
    inputs_per_tx: int = 1
    initial_coins: int = 2
    coin_value: int = 1000
    periods: int = 1
    # link latency: fixed when latency_max_ms is None, else uniform[min, max]
    latency_ms: float = 0.0
    latency_max_ms: Optional[float] = None
    drop_prob: float = 0.0
    behaviours: dict[int, Behaviour] = field(default_factory=dict)
    double_spend_fraction: float = 0.0
    query_service_us: int = 1000
    commit_service_us: int = 1000
    short_circuit: bool = False
    quorum: Optional[int] = None
    timeout_ms: float = 2000.0
    retries: int = 1
    epoch_entries: int = 1000
    epoch_interval_ms: float = 0.0
    vigilant: bool = False
    prune: bool = False
    fee_per_certification: int = 1
    bank_reserve: int = 10_000_000
    scheme: str = "test"
    wire: bool = False
    check_budget: bool = True

    def validate(self) -> None:
        q = self.shard_size
        if q < 1 or q % 2 == 0:
            raise ValueError("Q must be a positive odd integer")
        if self.mintettes < q:
            raise ValueError(f"M={self.mintettes} < Q={q}")
        if self.quorum is not None and not 1 <= self.quorum <= q:
            raise ValueError(f"quorum {self.quorum} outside 1..Q={q}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")
        if not 0.0 <= self.double_spend_fraction <= 1.0:
            raise ValueError("double-spend fraction must lie in [0, 1]")
        if self.latency_max_ms is not None and self.latency_max_ms < self.latency_ms:
            raise ValueError("latency upper bound below lower bound")
        if self.inputs_per_tx < 1 or self.initial_coins < 1:
            raise ValueError("need at least one input and one coin per client")
        if self.clients < 2:
            raise ValueError("need at least two clients")
        for i in self.behaviours:
            if not 0 <= i < self.mintettes:
                raise ValueError(f"behaviour assigned to unknown mintette {i}")


@dataclass
class BenchResult:
    throughput: float
    throughput_p90: float
    throughput_stderr: float
    sealed: int
    aborted: int
    duration_s: float
    # sealed tx/s between the 10th and 90th percentile completion times
    steady_throughput: float = 0.0
    phase1_ms: list[float] = field(default_factory=list)
    phase2_ms: list[float] = field(default_factory=list)
    total_ms: list[float] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    mintette_load: dict[str, int] = field(default_factory=dict)
    mintette_busy_s: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimResult:
    config: SimConfig
    bank: Bank
    archives: list[PeriodArchive]
    receipts: list[TxReceipt]
    bench: BenchResult
    trace: list[str]
    # per period: mintette id -> simulated time of each log entry
    log_times: list[dict[str, list[int]]]
    mintettes: dict[str, Mintette]

    @property
    def blocks(self):
        return self.bank.chain

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.trace:
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def archive_bytes(self) -> bytes:
        return b"".join(encode(a.block) + encode(a.logs) for a in self.archives)


class _Server:
    def __init__(self, mintette: Mintette):
        self.mintette = mintette
        self.queue: deque = deque()
        self.busy = False
        self.served = 0
        self.busy_us = 0


class _Validation:
    def __init__(self, sim: "Simulation", client: "_Client", tx: Transaction, done):
        self.sim = sim
        self.client = client
        self.tx = tx
        self.done = done
        self.steps = validation_steps(
            tx,
            sim.bank.period,
            sim.bank.shard_map,
            short_circuit=sim.config.short_circuit,
            retries=sim.config.retries,
        )
        self.round = 0
        self.responses: list = []
        self.pending = 0
        self.started = sim.now
        self.phase2_started: Optional[int] = None

    def start(self) -> None:
        self._issue(next(self.steps))

    def _issue(self, rnd) -> None:
        sim = self.sim
        self.round += 1
        if rnd.phase == 2 and self.phase2_started is None:
            self.phase2_started = sim.now
        self.responses = [_UNSET] * len(rnd.requests)
        self.pending = len(rnd.requests)
        token = self.round
        self.timers = []
        for i, (mid, req) in enumerate(rnd.requests):
            sim.send(mid, req, lambda resp, i=i: self._reply(token, i, resp))
            self.timers.append(sim.schedule(sim.now + sim.timeout_us, self._reply, token, i, None))

    def _reply(self, token: int, i: int, resp) -> None:
        if token != self.round or self.responses[i] is not _UNSET:
            return
        self.responses[i] = resp
        self.pending -= 1
        if resp is not None:
            self.sim.cancel(self.timers[i])
        if self.pending == 0:
            try:
                rnd = self.steps.send(self.responses)
            except StopIteration as stop:
                self._finish(stop.value)
            else:
                self._issue(rnd)

    def _finish(self, receipt: TxReceipt) -> None:
        sim = self.sim
        if sim.config.check_budget:
            check_budget(receipt, sim.bank.shard_map.shard_size)
        p2 = self.phase2_started if self.phase2_started is not None else sim.now
        sim.record_latency(p2 - self.started, sim.now - p2, sim.now - self.started, receipt)
        sim.log(f"done {self.client.name} {self.tx.hash.hex()[:16]} {receipt.status.value}")
        self.done(receipt)


_UNSET = object()


class _Client:
    def __init__(self, sim: "Simulation", name: str, wallet: Wallet, double_spender: bool):
        self.sim = sim
        self.name = name
        self.wallet = wallet
        self.double_spender = double_spender
        self.remaining = 0
        self.counter = 0

    def begin(self, txs: int) -> None:
        self.remaining = txs
        self.sim.active += 1
        self.next_tx()

    def _finish(self) -> None:
        self.remaining = 0
        self.sim.active -= 1

    def next_tx(self) -> None:
        sim = self.sim
        if self.remaining <= 0 or not self.wallet.coins:
            self._finish()
            return
        self.remaining -= 1
        coins = sorted(self.wallet.coins)
        m = min(sim.config.inputs_per_tx, len(coins))
        chosen = sim.rng.sample(coins, m)
        total = sum(a.value for a in chosen)
        others = [c for c in sim.clients if c is not self]
        to = sim.rng.choice(others)
        amount = sim.rng.randint(1, total)
        txs = [self._build(to, amount, chosen)]
        if self.double_spender:
            rival = sim.rng.choice(others)
            txs.append(self._build(rival, max(1, total - amount), chosen))
        outcomes: list[TxReceipt] = []

        def settled(receipt: TxReceipt) -> None:
            outcomes.append(receipt)
            if len(outcomes) == len(txs):
                self._settle(outcomes, chosen)

        for tx in txs:
            sim.log(f"submit {self.name} {tx.hash.hex()[:16]} m={len(tx.inputs)}")
            _Validation(sim, self, tx, settled).start()

    def _build(self, to: "_Client", amount: int, chosen: list[AddrId]) -> Transaction:
        self.counter += 1
        memo = f"{self.name}:{self.sim.bank.period}:{self.counter}".encode()
        return self.wallet.pay(to.wallet.address, amount, inputs=chosen, memo=memo)

    def _settle(self, receipts: list[TxReceipt], chosen: list[AddrId]) -> None:
        sim = self.sim
        for a in chosen:
            self.wallet.coins.pop(a, None)
        for r in receipts:
            sim.receipts.append(r)
            if r.sealed:
                for c in sim.clients:
                    c.wallet.receive(r.tx)
        self.next_tx()


class Simulation:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.rng = random.Random(config.seed)
        self.now = 0
        self._events: list = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self.trace: list[str] = []
        self.timeout_us = int(round(config.timeout_ms * MS))
        self.receipts: list[TxReceipt] = []
        self.archives: list[PeriodArchive] = []
        self.log_times: list[dict[str, list[int]]] = []
        self.active = 0
        self._latency: list[tuple[int, int, int, TxReceipt]] = []
        self._completed: list[int] = []

        tag = b"sim/%d" % config.seed
        self.bank = Bank(
            crypto.keygen(tag + b"/bank", config.scheme),
            shard_size=config.shard_size,
            fee_per_certification=config.fee_per_certification,
            vigilant=config.vigilant,
            prune=config.prune,
        )
        policy = EpochPolicy(max_entries=config.epoch_entries, interval=config.epoch_interval_ms / 1000)
        self.mintettes: dict[str, Mintette] = {}
        for i in range(config.mintettes):
            cls = BEHAVIOURS[Behaviour(config.behaviours.get(i, Behaviour.HONEST))]
            mid = f"m{i:02d}"
            self.mintettes[mid] = cls(
                mid, crypto.keygen(tag + b"/" + mid.encode(), config.scheme),
                quorum=config.quorum, epoch_policy=policy,
            )
        self.servers = {mid: _Server(m) for mid, m in self.mintettes.items()}

        n_double = int(round(config.double_spend_fraction * config.clients))
        cheaters = set(self.rng.sample(range(config.clients), n_double))
        self.clients = [
            _Client(self, f"c{i:03d}", Wallet(crypto.keygen(tag + b"/c%d" % i, config.scheme)), i in cheaters)
            for i in range(config.clients)
        ]
        allocations = [
            (c.wallet.address, config.coin_value) for c in self.clients for _ in range(config.initial_coins)
        ]
        self.bank.genesis([(mid, m.pk) for mid, m in self.mintettes.items()], allocations, config.bank_reserve)

    # -- event core ------------------------------------------------------------

    def schedule(self, t: int, fn: Callable, *args) -> int:
        self._seq += 1
        heapq.heappush(self._events, (t, self._seq, fn, args))
        return self._seq

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def run_until_idle(self) -> None:
        while self._events:
            t, seq, fn, args = heapq.heappop(self._events)
            if seq in self._cancelled:
                # a cancelled timer must not advance the clock
                self._cancelled.discard(seq)
                continue
            self.now = t
            fn(*args)

    def log(self, line: str) -> None:
        self.trace.append(f"{self.now} {line}")

    def _latency_us(self) -> int:
        cfg = self.config
        if cfg.latency_max_ms is None:
            return int(round(cfg.latency_ms * MS))
        return int(round(self.rng.uniform(cfg.latency_ms, cfg.latency_max_ms) * MS))

    def _dropped(self) -> bool:
        return self.config.drop_prob > 0 and self.rng.random() < self.config.drop_prob

    def send(self, mid: str, req, reply: Callable) -> None:
        lat = self._latency_us()
        if self._dropped():
            self.log(f"drop ->{mid} {type(req).__name__}")
            return
        if self.config.wire:
            req = decode(encode(req))
        self.schedule(self.now + lat, self._arrive, mid, req, reply)

    def _arrive(self, mid: str, req, reply) -> None:
        server = self.servers[mid]
        server.queue.append((req, reply))
        if not server.busy:
            self._serve(server)

    def _service_us(self, req) -> int:
        if isinstance(req, QueryReq):
            return self.config.query_service_us
        if isinstance(req, CommitReq):
            return self.config.commit_service_us
        return 0

    def _serve(self, server: _Server) -> None:
        req, reply = server.queue.popleft()
        server.busy = True
        cost = self._service_us(req)
        server.busy_us += cost
        self.schedule(self.now + cost, self._complete, server, req, reply)

    def _complete(self, server: _Server, req, reply) -> None:
        m = server.mintette
        server.served += 1
        before = m.seq
        resp = None if is_silent(m) else dispatch(m, req)
        self._stamp(m, before)
        self.log(f"serve {m.id} {type(req).__name__} seq={m.seq}")
        if resp is not None and not self._dropped():
            if self.config.wire:
                resp = decode(encode(resp))
            self.schedule(self.now + self._latency_us(), reply, resp)
        server.busy = False
        if server.queue:
            self._serve(server)

    def _stamp(self, m: Mintette, before: int) -> None:
        times = self.log_times[-1].setdefault(m.id, [])
        times.extend([self.now] * (m.seq - before))

    def _epoch_tick(self, mid: str) -> None:
        m = self.mintettes[mid]
        if m.epoch_entries and not is_silent(m):
            before = m.seq
            m.seal_epoch()
            self._stamp(m, before)
            self.log(f"epoch {mid} {m.epoch}")
        if self.active:
            self.schedule(self.now + int(self.config.epoch_interval_ms * MS), self._epoch_tick, mid)

    def record_latency(self, p1: int, p2: int, total: int, receipt: TxReceipt) -> None:
        self._latency.append((p1, p2, total, receipt))
        if receipt.sealed:
            self._completed.append(self.now)

    # -- periods -----------------------------------------------------------------

    def _start_period(self) -> None:
        smap = self.bank.shard_map
        self.log_times.append({})
        for mid, m in self.mintettes.items():
            utxo = tuple(UtxoEntry(a, o) for a, o in sorted(self.bank.utxo_slice(mid).items()))
            dispatch(m, NewPeriodReq(smap, self.bank.head, utxo))
        for c in self.clients:
            c.wallet.coins = {a: o for a, o in self.bank.utxo.outputs.items() if o.addr == c.wallet.address}
        self.log(f"period {smap.period} start")

    def _end_period(self) -> None:
        blocks, logs = {}, {}
        for mid, m in self.mintettes.items():
            before = m.seq
            resp = dispatch(m, EndPeriodReq())
            self._stamp(m, before)
            blocks[mid] = list(resp.lower_blocks)
            logs[mid] = list(resp.log)
        archive = self.bank.close_period(blocks, logs)
        self.archives.append(archive)
        self.log(f"period {archive.period} sealed {archive.block.h.hex()[:16]}")

    def run(self) -> SimResult:
        cfg = self.config
        start = self.now
        for _ in range(cfg.periods):
            self._start_period()
            for c in self.clients:
                self.schedule(self.now, c.begin, cfg.txs_per_client)
            if cfg.epoch_interval_ms > 0:
                for mid in self.mintettes:
                    self.schedule(self.now + int(cfg.epoch_interval_ms * MS), self._epoch_tick, mid)
            self.run_until_idle()
            self._end_period()
        return SimResult(
            cfg,
            self.bank,
            self.archives,
            self.receipts,
            self._bench(self.now - start),
            self.trace,
            self.log_times,
            self.mintettes,
        )

    def _bench(self, duration_us: int) -> BenchResult:
        sealed = [r for *_, r in self._latency if r.sealed]
        duration_s = duration_us / SECOND
        throughput = len(sealed) / duration_s if duration_s > 0 else 0.0
        windows = _windowed_throughput(self._completed, duration_us)
        p90 = _percentile(windows, 90) if windows else throughput
        stderr = _stderr(windows)
        return BenchResult(
            throughput=throughput,
            throughput_p90=p90,
            throughput_stderr=stderr,
            sealed=len(sealed),
            aborted=len(self._latency) - len(sealed),
            duration_s=duration_s,
            steady_throughput=_steady_throughput(self._completed),
            phase1_ms=[p1 / MS for p1, _, _, r in self._latency if r.sealed],
            phase2_ms=[p2 / MS for _, p2, _, r in self._latency if r.sealed],
            total_ms=[t / MS for _, _, t, r in self._latency if r.sealed],
            messages=[r.messages for *_, r in self._latency],
            mintette_load={mid: s.served for mid, s in self.servers.items()},
            mintette_busy_s={mid: s.busy_us / SECOND for mid, s in self.servers.items()},
        )


def _steady_throughput(times: list[int], lo: float = 0.1, hi: float = 0.9) -> float:
    if len(times) < 10:
        return 0.0
    ordered = sorted(times)
    i, j = int(lo * (len(ordered) - 1)), int(hi * (len(ordered) - 1))
    span = ordered[j] - ordered[i]
    return (j - i) / (span / SECOND) if span > 0 else 0.0


def _windowed_throughput(times: list[int], duration_us: int, windows: int = 10) -> list[float]:
    if duration_us <= 0 or not times:
        return []
    width = duration_us / windows
    counts = [0] * windows
    for t in times:
        counts[min(windows - 1, int(t // width))] += 1
    return [c / (width / SECOND) for c in counts]


def _percentile(values: list[float], pct: float) -> float:
    ordered = sorted(values)
    k = (len(ordered) - 1) * pct / 100
    lo, hi = math.floor(k), math.ceil(k)
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (k - lo)


def _stderr(values: list[float]) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def run_scenario(config: SimConfig) -> SimResult:
    """Run ``config.periods`` full periods under the simulated clock."""
    return Simulation(config).run()
