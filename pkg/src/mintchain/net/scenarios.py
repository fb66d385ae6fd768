"""Small scripted periods, each with one planted misbehaviour.

Every function returns a :class:`Scenario` holding the published archive,
the receipts users kept and the party that should be blamed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .. import crypto
from ..bank import Bank, PeriodArchive
from ..client import TxReceipt, Wallet
from ..core import sorted_txs
from ..mintette import Mintette
from .behaviours import BackdatingMintette, ForkLogMintette, InsertingMintette, SilentMintette
from .local import LocalNetwork


@dataclass
class Scenario:
    name: str
    archive: PeriodArchive
    bank_pk: bytes
    receipts: list[TxReceipt]
    culprit: str
    # the finding kind the planted misbehaviour should produce
    expected: str
    network: LocalNetwork = field(repr=False, default=None)


class OmittingBank(Bank):
    """Drops chosen committed transactions when merging lower blocks."""

    def __init__(self, *args, omit=(), **kwargs):
        super().__init__(*args, **kwargs)
        self.omit = set(omit)

    def merge(self, blocks, logs, shard_map, prev):
        merged, conflicts, rejected = super().merge(blocks, logs, shard_map, prev)
        return sorted_txs(tx for tx in merged if tx.hash not in self.omit), conflicts, rejected


def _wallets(n: int, tag: bytes) -> list[Wallet]:
    return [Wallet(crypto.keygen(tag + b"/w%d" % i, "test")) for i in range(n)]


def _network(tag: bytes, kinds=None, *, m: int = 3, coins: int = 3, bank_cls=Bank) -> tuple[LocalNetwork, list[Wallet]]:
    wallets = _wallets(3, tag)
    allocations = [(w.address, 100) for w in wallets for _ in range(coins)]
    bank = bank_cls(crypto.keygen(tag + b"/bank", "test"), shard_size=3)
    nodes = []
    for i in range(m):
        kind = (kinds or {}).get(i, Mintette)
        nodes.append(kind(f"m{i}", crypto.keygen(tag + b"/m%d" % i, "test")))
    net = LocalNetwork(bank, nodes)
    bank.genesis([(n.id, n.pk) for n in nodes], allocations, 1_000_000)
    net.start_period()
    for w in wallets:
        for tx in bank.chain[0].txset:
            w.receive(tx)
    return net, wallets


def _pay(net: LocalNetwork, wallets: list[Wallet], src: int, dst: int, amount: int) -> TxReceipt:
    tx = wallets[src].pay(wallets[dst].address, amount, inputs=[sorted(wallets[src].coins)[0]])
    r = net.submit(tx)
    if r.sealed:
        for w in wallets:
            if w is wallets[src]:
                w.spend(tx)
            w.receive(tx)
    return r


def _traffic(net, wallets, rounds: int = 3) -> None:
    for k in range(rounds):
        for i in range(len(wallets)):
            _pay(net, wallets, i, (i + 1 + k) % len(wallets), 10)


def log_fork_after_receipt() -> Scenario:
    """m1 signs receipts, then publishes a rewritten log."""
    net, wallets = _network(b"fork", {1: ForkLogMintette})
    _traffic(net, wallets, 2)
    archive = net.end_period()
    return Scenario("log fork", archive, net.bank.pk, net.receipts, "m1", "LogFork", net)


def bank_omission() -> Scenario:
    """The bank leaves a committed transaction out of the higher block."""
    net, wallets = _network(b"omit", bank_cls=OmittingBank)
    _traffic(net, wallets, 1)
    victim = net.receipts[0].tx.hash
    net.bank.omit.add(victim)
    _traffic(net, wallets, 1)
    archive = net.end_period()
    return Scenario("bank omission", archive, net.bank.pk, net.receipts, "bank", "Omission", net)


def mintette_insertion() -> Scenario:
    """m2 puts a signed but never validated transaction into its lower block."""
    net, wallets = _network(b"insert", {2: InsertingMintette})
    _traffic(net, wallets, 1)
    w = wallets[0]
    smuggled = w.pay(wallets[1].address, 5, inputs=[sorted(w.coins)[-1]], memo=b"smuggled")
    net.mintettes["m2"].insert(smuggled)
    archive = net.end_period()
    return Scenario("mintette insertion", archive, net.bank.pk, net.receipts, "m2", "Insertion", net)


def retroactive_entry() -> Scenario:
    """m0 ignores a tx, then back-dates a vote for it once its commits spread."""
    net, wallets = _network(b"retro", {0: BackdatingMintette})
    m0 = net.mintettes["m0"]
    m0.silent = True
    late = _pay(net, wallets, 0, 1, 10)
    m0.silent = False
    _traffic(net, wallets, 2)
    m0.backdate(late.tx, late.tx.addr_ids[0])
    archive = net.end_period()
    return Scenario("retroactive entry", archive, net.bank.pk, net.receipts, "m0", "RetroactiveEntry", net)


def inactivity() -> Scenario:
    """m1 stays silent for the whole period."""
    net, wallets = _network(b"idle", {1: SilentMintette})
    _traffic(net, wallets, 2)
    archive = net.end_period()
    return Scenario("inactivity", archive, net.bank.pk, net.receipts, "m1", "Inactive", net)


MISBEHAVIOURS: dict[str, Callable[[], Scenario]] = {
    "log-fork": log_fork_after_receipt,
    "bank-omission": bank_omission,
    "mintette-insertion": mintette_insertion,
    "retroactive-entry": retroactive_entry,
    "inactivity": inactivity,
}


def honest_period(tag: bytes = b"honest") -> Scenario:
    net, wallets = _network(tag)
    _traffic(net, wallets, 2)
    archive = net.end_period()
    return Scenario("honest", archive, net.bank.pk, net.receipts, "", "", net)


__all__ = ["MISBEHAVIOURS", "OmittingBank", "Scenario", "honest_period"]
