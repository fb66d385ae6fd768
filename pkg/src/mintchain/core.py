"""Ledger domain types and structural transaction validation."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Union

from . import crypto
from .crypto import Hash
from .encoding import (
    ADDR,
    BYTES,
    HASH,
    OBJ,
    U64,
    U64_MAX,
    EnumKind,
    List,
    Opt,
    Tuple,
    encode,
    record,
)

PublicKey = bytes


class TxKind(enum.IntEnum):
    NORMAL = 0
    COIN_GENERATION = 1
    FEE_PAYOUT = 2
    # bank-signed replacement for a collapsed chain of same-period transactions
    PRUNED = 3


@record(0x01, tx_hash=HASH, index=U64, value=U64)
@dataclass(frozen=True, order=True)
class AddrId:
    """Names one output: (hash of the creating tx, output index, value)."""

    tx_hash: Hash
    index: int
    value: int

    def __repr__(self) -> str:
        return f"AddrId({self.tx_hash.hex()[:8]}:{self.index}, v={self.value})"


@record(0x02, addr=ADDR, value=U64)
@dataclass(frozen=True)
class Output:
    addr: Union[PublicKey, "SpendCondition"]
    value: int


@record(
    0x03,
    hashes=List(HASH),
    redeem_pk=BYTES,
    refund_pks=List(BYTES),
    timeout=U64,
)
@dataclass(frozen=True)
class SpendCondition:
    """Hash-locked output with a timed multisignature refund branch.

    Hash-lock branch: ``redeem_pk`` signs and supplies preimages of every
    entry in ``hashes``; valid while the ledger period is <= ``timeout``.
    Refund branch: every key in ``refund_pks`` signs; valid once the
    period is > ``timeout``.  The two branches never overlap in time.
    """

    hashes: tuple[Hash, ...]
    redeem_pk: PublicKey
    refund_pks: tuple[PublicKey, ...]
    timeout: int


@record(0x04, condition=OBJ, preimages=List(BYTES), cosigs=List(Tuple(BYTES, BYTES)))
@dataclass(frozen=True)
class Witness:
    condition: SpendCondition
    preimages: tuple[bytes, ...] = ()
    cosigs: tuple[tuple[PublicKey, bytes], ...] = ()


@record(0x05, addr_id=OBJ, sig=BYTES, pk=BYTES, witness=Opt(OBJ))
@dataclass(frozen=True)
class Input:
    addr_id: AddrId
    sig: bytes = b""
    pk: PublicKey = b""
    witness: Optional[Witness] = None


@record(0x06, kind=EnumKind(TxKind), inputs=List(OBJ), outputs=List(OBJ), memo=BYTES)
@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    inputs: tuple[Input, ...]
    outputs: tuple[Output, ...]
    # distinguishes otherwise identical input-free transactions
    memo: bytes = b""

    @cached_property
    def hash(self) -> Hash:
        return tx_hash(self)

    @property
    def addr_ids(self) -> tuple[AddrId, ...]:
        return tuple(i.addr_id for i in self.inputs)

    def output_ids(self) -> tuple[AddrId, ...]:
        h = self.hash
        return tuple(AddrId(h, i, o.value) for i, o in enumerate(self.outputs))

    def input_sum(self) -> int:
        return sum(i.addr_id.value for i in self.inputs)

    def output_sum(self) -> int:
        return sum(o.value for o in self.outputs)

    def fee(self) -> int:
        return self.input_sum() - self.output_sum() if self.inputs else 0

    def __repr__(self) -> str:
        return (
            f"Tx({self.hash.hex()[:8]}, {self.kind.name}, "
            f"{len(self.inputs)}in/{len(self.outputs)}out)"
        )


@record(0x07, kind=EnumKind(TxKind), addr_ids=List(OBJ), outputs=List(OBJ), memo=BYTES)
@dataclass(frozen=True)
class TxBody:
    kind: TxKind
    addr_ids: tuple[AddrId, ...]
    outputs: tuple[Output, ...]
    memo: bytes


@record(0x08, body=OBJ, addr_id=OBJ)
@dataclass(frozen=True)
class InputAuthorization:
    body: TxBody
    addr_id: AddrId


def tx_hash(tx: Transaction) -> Hash:
    return crypto.H(encode(tx))


def tx_body(tx: Transaction) -> TxBody:
    return TxBody(tx.kind, tx.addr_ids, tx.outputs, tx.memo)


def authorization_message(tx: Transaction, addr_id: AddrId) -> bytes:
    """Bytes an input owner signs: the signature-free body plus the spent addrid."""
    return encode(InputAuthorization(tx_body(tx), addr_id))


def make_tx(
    spends: list[tuple[AddrId, crypto.KeyPair]],
    outputs: list[tuple[PublicKey | SpendCondition, int]],
    kind: TxKind = TxKind.NORMAL,
    memo: bytes = b"",
) -> Transaction:
    """Build a transaction whose inputs are signed by their plain-key owners."""
    outs = tuple(Output(a, v) for a, v in outputs)
    unsigned = Transaction(kind, tuple(Input(a) for a, _ in spends), outs, memo)
    inputs = tuple(
        Input(a, kp.sign(authorization_message(unsigned, a)), kp.pk) for a, kp in spends
    )
    return Transaction(kind, inputs, outs, memo)


def with_inputs(tx: Transaction, inputs) -> Transaction:
    return replace(tx, inputs=tuple(inputs))


class Reason(str, enum.Enum):
    OK = "Ok"
    MALFORMED = "Malformed"
    UNKNOWN_INPUT = "UnknownInput"
    VALUE_MISMATCH = "ValueMismatch"
    OVERSPEND = "Overspend"
    BAD_SIGNATURE = "BadSignature"


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    reason: Reason = Reason.OK
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


OK = CheckResult(True)

Resolver = Callable[[AddrId], Optional[Output]]


def _fail(reason: Reason, detail: str = "") -> CheckResult:
    return CheckResult(False, reason, detail)


def check_condition(
    cond: SpendCondition, inp: Input, message: bytes, period: Optional[int]
) -> bool:
    w = inp.witness
    if w is None or w.condition != cond:
        return False
    if w.preimages:
        if period is not None and period > cond.timeout:
            return False
        if len(w.preimages) != len(cond.hashes):
            return False
        if any(crypto.H(x) != h for x, h in zip(w.preimages, cond.hashes)):
            return False
        return inp.pk == cond.redeem_pk and crypto.verify(inp.pk, message, inp.sig)
    if period is None or period <= cond.timeout:
        return False
    sigs = dict(w.cosigs)
    return all(pk in sigs and crypto.verify(pk, message, sigs[pk]) for pk in cond.refund_pks)


def check_tx(tx: Transaction, resolve: Resolver, period: Optional[int] = None) -> CheckResult:
    """Structural validity of ``tx`` against the outputs ``resolve`` knows.

    Returns a falsy :class:`CheckResult` with a reason code instead of
    raising.  ``period`` is the ledger period, needed only for
    time-conditioned outputs.
    """
    if tx.kind == TxKind.COIN_GENERATION:
        return OK if not tx.inputs and tx.outputs else _fail(Reason.MALFORMED, "generation shape")
    if not tx.inputs or not tx.outputs:
        return _fail(Reason.MALFORMED, "needs at least one input and one output")
    ids = tx.addr_ids
    if len(set(ids)) != len(ids):
        return _fail(Reason.MALFORMED, "duplicate input")
    total_in = sum(a.value for a in ids)
    total_out = tx.output_sum()
    if total_in > U64_MAX or total_out > U64_MAX:
        return _fail(Reason.MALFORMED, "value sum overflows 64 bits")

    resolved = []
    for a in ids:
        out = resolve(a)
        if out is None:
            return _fail(Reason.UNKNOWN_INPUT, repr(a))
        if out.value != a.value:
            return _fail(Reason.VALUE_MISMATCH, repr(a))
        resolved.append(out)

    if total_in < total_out:
        return _fail(Reason.OVERSPEND, f"{total_in} < {total_out}")

    for inp, out in zip(tx.inputs, resolved):
        msg = authorization_message(tx, inp.addr_id)
        if isinstance(out.addr, SpendCondition):
            good = check_condition(out.addr, inp, msg, period)
        else:
            good = inp.pk == out.addr and crypto.verify(inp.pk, msg, inp.sig)
        if not good:
            return _fail(Reason.BAD_SIGNATURE, repr(inp.addr_id))
    return OK


def claimed_output(inp: Input) -> Output:
    """The output an input says it spends; trusted only pending owner votes."""
    addr = inp.witness.condition if inp.witness is not None else inp.pk
    return Output(addr, inp.addr_id.value)


@dataclass
class UtxoSet:
    """Plain unspent-output map with ordered replay of transaction sets."""

    outputs: dict[AddrId, Output] = field(default_factory=dict)

    def get(self, addr_id: AddrId) -> Optional[Output]:
        return self.outputs.get(addr_id)

    def apply(self, tx: Transaction) -> None:
        for a in tx.addr_ids:
            if a not in self.outputs:
                raise KeyError(f"replay spends unknown or spent output {a!r}")
            del self.outputs[a]
        for a, o in zip(tx.output_ids(), tx.outputs):
            self.outputs[a] = o

    def apply_all(self, txs, strict: bool = True) -> list[Transaction]:
        """Replay ``txs`` in dependency order; returns those skipped.

        Non-strict replay skips (instead of raising on) a transaction whose
        inputs are already gone, e.g. the losing half of a double-spend
        that an optimistic merge let through.
        """
        skipped = []
        for tx in topological_order(txs):
            if not strict and any(a not in self.outputs for a in tx.addr_ids):
                skipped.append(tx)
                continue
            self.apply(tx)
        return skipped

    def balances(self) -> dict:
        bal: dict = {}
        for o in self.outputs.values():
            bal[o.addr] = bal.get(o.addr, 0) + o.value
        return bal

    def copy(self) -> "UtxoSet":
        return UtxoSet(dict(self.outputs))


def topological_order(txs) -> list[Transaction]:
    """Order ``txs`` so every tx follows the set members it spends from.

    Ties are broken by hash so the order is canonical.  Raises ValueError
    on a dependency cycle.
    """
    by_hash = {tx.hash: tx for tx in txs}
    deps = {h: {a.tx_hash for a in tx.addr_ids if a.tx_hash in by_hash} for h, tx in by_hash.items()}
    users: dict[Hash, list[Hash]] = {h: [] for h in by_hash}
    for h, ds in deps.items():
        for d in ds:
            users[d].append(h)
    ready = [h for h, ds in deps.items() if not ds]
    heapq.heapify(ready)
    order = []
    while ready:
        h = heapq.heappop(ready)
        order.append(by_hash[h])
        for u in users[h]:
            deps[u].discard(h)
            if not deps[u]:
                heapq.heappush(ready, u)
    if len(order) != len(by_hash):
        raise ValueError("cyclic dependency among transactions")
    return order


def sorted_txs(txs) -> tuple[Transaction, ...]:
    """Canonical set order: ascending transaction hash, duplicates dropped."""
    uniq = {tx.hash: tx for tx in txs}
    return tuple(uniq[h] for h in sorted(uniq))


@dataclass(frozen=True)
class Verdict:
    """Pass/fail with a short machine-readable reason."""

    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok
