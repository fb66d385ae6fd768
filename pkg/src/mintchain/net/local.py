"""In-process transport and a whole ledger wired together in one process."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .. import crypto
from ..bank import Bank, PeriodArchive
from ..client import TxReceipt, check_budget, validate_transaction
from ..core import Transaction
from ..encoding import decode, encode
from ..messages import EndPeriodReq, NewPeriodReq, UtxoEntry, dispatch
from ..mintette import Mintette
from .behaviours import is_silent


class LocalTransport:
    """Delivers requests by direct call, optionally through the wire codec."""

    def __init__(self, mintettes: dict[str, Mintette], *, wire: bool = False):
        self.mintettes = mintettes
        self.wire = wire
        self.sent = 0
        self.received = 0

    def call(self, mintette_id: str, req):
        m = self.mintettes.get(mintette_id)
        if m is None:
            return None
        if self.wire:
            req = decode(encode(req))
        resp = dispatch(m, req)
        return decode(encode(resp)) if self.wire else resp

    def exchange(self, requests: Sequence[tuple[str, object]]) -> list:
        out = []
        for mid, req in requests:
            self.sent += 1
            m = self.mintettes.get(mid)
            if m is None or is_silent(m):
                out.append(None)
                continue
            out.append(self.call(mid, req))
            self.received += 1
        return out


class LocalNetwork:
    """A bank plus mintettes in one process, driven synchronously."""

    def __init__(
        self,
        bank: Bank,
        mintettes: Iterable[Mintette],
        *,
        wire: bool = False,
    ):
        self.bank = bank
        self.mintettes = {m.id: m for m in mintettes}
        self.transport = LocalTransport(self.mintettes, wire=wire)
        self.receipts: list[TxReceipt] = []

    @classmethod
    def create(
        cls,
        m: int = 3,
        q: int = 3,
        *,
        allocations: Sequence[tuple[bytes, int]] = (),
        reserve: int = 1_000_000,
        seed: bytes = b"local",
        scheme: str = "test",
        mintette_cls: Optional[dict[int, type[Mintette]]] = None,
        **bank_options,
    ) -> "LocalNetwork":
        """Genesis with ``m`` mintettes; ``mintette_cls`` overrides by index."""
        bank = Bank(crypto.keygen(seed + b"/bank", scheme), shard_size=q, **bank_options)
        nodes = []
        for i in range(m):
            kind = (mintette_cls or {}).get(i, Mintette)
            nodes.append(kind(f"m{i}", crypto.keygen(seed + b"/m%d" % i, scheme)))
        net = cls(bank, nodes)
        bank.genesis([(n.id, n.pk) for n in nodes], list(allocations), reserve)
        net.start_period()
        return net

    @property
    def period(self) -> int:
        return self.bank.period

    @property
    def shard_map(self):
        return self.bank.shard_map

    def start_period(self) -> None:
        smap = self.bank.shard_map
        for mid in sorted(self.mintettes):
            utxo = tuple(UtxoEntry(a, o) for a, o in sorted(self.bank.utxo_slice(mid).items()))
            self.transport.call(mid, NewPeriodReq(smap, self.bank.head, utxo))

    def submit(self, tx: Transaction, *, short_circuit: bool = False) -> TxReceipt:
        receipt = validate_transaction(
            tx, self.period, self.transport, self.shard_map, short_circuit=short_circuit
        )
        check_budget(receipt, self.shard_map.shard_size)
        self.receipts.append(receipt)
        return receipt

    def collect(self) -> tuple[dict, dict]:
        """Ask every mintette for its blocks and log, closing the period for them."""
        blocks, logs = {}, {}
        for mid in sorted(self.mintettes):
            resp = self.transport.call(mid, EndPeriodReq())
            blocks[mid] = list(resp.lower_blocks)
            logs[mid] = list(resp.log)
        return blocks, logs

    def end_period(self, *, excluded=(), tamper=None) -> PeriodArchive:
        """Close the period at the bank and start the next one.

        ``tamper`` may rewrite (blocks, logs) before the bank sees them.
        """
        blocks, logs = self.collect()
        if tamper is not None:
            blocks, logs = tamper(blocks, logs)
        archive = self.bank.close_period(blocks, logs, excluded=excluded)
        self.start_period()
        return archive

    def balances(self) -> dict[bytes, int]:
        return self.bank.utxo.balances()

    def sealed_tx(self, tx_hash: bytes) -> Optional[Transaction]:
        """The transaction with ``tx_hash`` if some higher block carries it."""
        for block in self.bank.chain:
            for tx in block.txset:
                if tx.hash == tx_hash:
                    return tx
        return None
