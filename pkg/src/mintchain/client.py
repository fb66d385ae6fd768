"""User-side two-phase commit driver and a minimal wallet.

The protocol is written once, as a generator that yields rounds of
requests and receives the matching responses (``None`` for a request that
timed out or was lost).  Synchronous, asyncio and simulated transports all
drive the same generator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Generator, Optional, Protocol, Sequence

from . import crypto
from .core import AddrId, Output, Transaction, make_tx
from .messages import CommitReq, QueryReq, result_of
from .mintette import EvidenceBundle, Refusal, RefusalReason, Vote
from .sharding import ShardMap


class TxStatus(enum.Enum):
    SEALED = "Sealed"
    ABORTED = "Aborted"


class AbortReason(str, enum.Enum):
    DOUBLE_SPEND = "DoubleSpend"
    QUORUM_UNREACHABLE = "QuorumUnreachable"
    INVALID_VOTE = "InvalidVote"


@dataclass
class TxReceipt:
    tx: Transaction
    period: int
    bundle: EvidenceBundle = field(default_factory=EvidenceBundle)
    confirmations: dict[str, Vote] = field(default_factory=dict)
    status: TxStatus = TxStatus.ABORTED
    reason: Optional[AbortReason] = None
    conflict: Optional[bytes] = None
    messages_sent: int = 0
    messages_received: int = 0
    # retried requests and their replies, included in the two counts above
    retransmissions: int = 0

    @property
    def sealed(self) -> bool:
        return self.status is TxStatus.SEALED

    @property
    def messages(self) -> int:
        return self.messages_sent + self.messages_received

    @property
    def first_attempt_messages(self) -> int:
        return self.messages - self.retransmissions


@dataclass
class Round:
    phase: int
    requests: list[tuple[str, object]]


def message_budget(m: int, q: int) -> int:
    """Upper bound on messages a user sends and receives for one m-input tx."""
    if m < 0 or q < 1:
        raise ValueError("need m >= 0 and Q >= 1")
    return 2 * (m + 1) * q


class MessageBudgetExceeded(AssertionError):
    pass


def check_budget(receipt: TxReceipt, q: int) -> None:
    """Raise if first-attempt traffic for ``receipt`` went over 2(m+1)Q."""
    budget = message_budget(len(receipt.tx.inputs), q)
    if receipt.first_attempt_messages > budget:
        raise MessageBudgetExceeded(
            f"{receipt.first_attempt_messages} messages for tx {receipt.tx.hash.hex()[:12]}, budget {budget}"
        )


def validation_steps(
    tx: Transaction,
    period: int,
    shard_map: ShardMap,
    *,
    short_circuit: bool = False,
    retries: int = 1,
) -> Generator[Round, list, TxReceipt]:
    """Collect input votes, then commit with the evidence bundle.

    With ``short_circuit`` only a quorum of each input's owners is asked
    first; the rest are contacted only if that wave falls short.
    """
    receipt = TxReceipt(tx, period)
    h = tx.hash
    quorum = shard_map.quorum

    def abort(reason: AbortReason, conflict=None) -> TxReceipt:
        receipt.status = TxStatus.ABORTED
        receipt.reason = reason
        receipt.conflict = conflict
        return receipt

    votes: dict[tuple[str, AddrId], Vote] = {}
    uncontacted = {a: list(shard_map.owners(a)) for a in tx.addr_ids}
    attempts: dict[tuple[str, AddrId], int] = {}

    def take(a: AddrId, n: int) -> list[tuple[str, AddrId]]:
        picked, uncontacted[a] = uncontacted[a][:n], uncontacted[a][n:]
        return [(m, a) for m in picked]

    wave = []
    for a in tx.addr_ids:
        wave += take(a, quorum if short_circuit else len(uncontacted[a]))

    while wave:
        responses = yield Round(1, [(m, QueryReq(tx, a)) for m, a in wave])
        receipt.messages_sent += len(wave)
        retry = []
        for (m, a), resp in zip(wave, responses):
            result = result_of(resp)
            resent = attempts.get((m, a), 0) > 0
            receipt.retransmissions += resent
            if result is None:
                attempts[(m, a)] = attempts.get((m, a), 0) + 1
                if attempts[(m, a)] <= retries:
                    retry.append((m, a))
                continue
            receipt.messages_received += 1
            receipt.retransmissions += resent
            if isinstance(result, Refusal):
                if result.reason == RefusalReason.DOUBLE_SPEND.value:
                    return abort(AbortReason.DOUBLE_SPEND, result.conflict)
                continue
            if result.pk != shard_map.pk(m) or not result.verify(h, a):
                return abort(AbortReason.INVALID_VOTE)
            votes[(m, a)] = result
        wave = retry
        pending = {a for _, a in retry}
        for a in tx.addr_ids:
            have = sum(1 for (m, b) in votes if b == a)
            if a not in pending and have < quorum and uncontacted[a]:
                wave += take(a, len(uncontacted[a]))

    for a in tx.addr_ids:
        if sum(1 for (_, b) in votes if b == a) < quorum:
            return abort(AbortReason.QUORUM_UNREACHABLE)

    receipt.bundle = EvidenceBundle.from_votes(votes)
    req = CommitReq(tx, period, receipt.bundle)
    wave = list(shard_map.owners_of_tx(h))
    attempts_c: dict[str, int] = {}
    while wave:
        responses = yield Round(2, [(m, req) for m in wave])
        receipt.messages_sent += len(wave)
        retry = []
        for m, resp in zip(wave, responses):
            result = result_of(resp)
            resent = attempts_c.get(m, 0) > 0
            receipt.retransmissions += resent
            if result is None:
                attempts_c[m] = attempts_c.get(m, 0) + 1
                if attempts_c[m] <= retries:
                    retry.append(m)
                continue
            receipt.messages_received += 1
            receipt.retransmissions += resent
            if isinstance(result, Refusal):
                continue
            if result.pk != shard_map.pk(m) or not result.verify(h, None):
                return abort(AbortReason.INVALID_VOTE)
            receipt.confirmations[m] = result
        wave = retry

    if len(receipt.confirmations) < quorum:
        return abort(AbortReason.QUORUM_UNREACHABLE)
    receipt.status = TxStatus.SEALED
    return receipt


class Transport(Protocol):
    def exchange(self, requests: Sequence[tuple[str, object]]) -> list: ...


def drive(steps: Generator[Round, list, TxReceipt], exchange) -> TxReceipt:
    try:
        rnd = next(steps)
        while True:
            rnd = steps.send(exchange(rnd.requests))
    except StopIteration as stop:
        return stop.value


async def adrive(steps: Generator[Round, list, TxReceipt], exchange) -> TxReceipt:
    try:
        rnd = next(steps)
        while True:
            rnd = steps.send(await exchange(rnd.requests))
    except StopIteration as stop:
        return stop.value


def validate_transaction(
    tx: Transaction,
    period: int,
    transport: Transport,
    shard_map: ShardMap,
    *,
    short_circuit: bool = False,
) -> TxReceipt:
    """Run both phases over a blocking transport."""
    return drive(
        validation_steps(tx, period, shard_map, short_circuit=short_circuit), transport.exchange
    )


async def avalidate_transaction(
    tx: Transaction, period: int, transport, shard_map: ShardMap, *, short_circuit: bool = False
) -> TxReceipt:
    return await adrive(
        validation_steps(tx, period, shard_map, short_circuit=short_circuit), transport.exchange
    )


class Wallet:
    """Outputs spendable by one key, with naive largest-first coin selection."""

    def __init__(self, keypair: crypto.KeyPair):
        self.keypair = keypair
        self.coins: dict[AddrId, Output] = {}

    @property
    def address(self) -> bytes:
        return self.keypair.pk

    def balance(self) -> int:
        return sum(a.value for a in self.coins)

    def receive(self, tx: Transaction) -> None:
        for a, o in zip(tx.output_ids(), tx.outputs):
            if o.addr == self.address:
                self.coins[a] = o

    def pick(self, amount: int, max_inputs: Optional[int] = None) -> list[AddrId]:
        chosen, total = [], 0
        for a in sorted(self.coins, key=lambda a: (-a.value, a)):
            if total >= amount and chosen:
                break
            if max_inputs is not None and len(chosen) >= max_inputs:
                break
            chosen.append(a)
            total += a.value
        if total < amount:
            raise ValueError(f"insufficient funds: have {total}, need {amount}")
        return chosen

    def pay(
        self,
        to: bytes,
        amount: int,
        *,
        inputs: Optional[list[AddrId]] = None,
        fee: int = 0,
        memo: bytes = b"",
    ) -> Transaction:
        """Build (not submit) a payment; change returns to this wallet."""
        ids = inputs if inputs is not None else self.pick(amount + fee)
        total = sum(a.value for a in ids)
        outs = [(to, amount)]
        if total - amount - fee > 0:
            outs.append((self.address, total - amount - fee))
        return make_tx([(a, self.keypair) for a in ids], outs, memo=memo)

    def spend(self, tx: Transaction) -> None:
        for a in tx.addr_ids:
            self.coins.pop(a, None)
