"""The mintette: vote, commit, hash-chained action log, epochs, lower blocks."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

from . import crypto
from .core import (
    AddrId,
    Output,
    Transaction,
    TxKind,
    Verdict,
    check_tx,
    claimed_output,
    sorted_txs,
)
from .crypto import H, Hash
from .encoding import BYTES, HASH, OBJ, STR, U64, List, Opt, encode, encode_many, record
from .sharding import ShardMap, authorization_message

GENESIS_HEAD = H(b"")
GENESIS_BLOCK_HASH = H(b"\x00")
BANK_GENESIS_HASH = H(b"bank-genesis")


@record(0x20, tx_hash=HASH, addr_id=Opt(OBJ), head=HASH, seq=U64)
@dataclass(frozen=True)
class VoteStatement:
    tx_hash: Hash
    addr_id: Optional[AddrId]
    head: Hash
    seq: int


@record(0x21, pk=BYTES, sig=BYTES, head=HASH, seq=U64)
@dataclass(frozen=True)
class Vote:
    """Signed statement over (tx, addrid, head, seq).

    Phase-1 votes name the input addrid; commit confirmations use the same
    shape with no addrid.
    """

    pk: bytes
    sig: bytes
    head: Hash
    seq: int

    def verify(self, tx_hash: Hash, addr_id: Optional[AddrId]) -> bool:
        msg = encode(VoteStatement(tx_hash, addr_id, self.head, self.seq))
        return crypto.verify(self.pk, msg, self.sig)


@record(0x22, mintette_id=STR, addr_id=OBJ, vote=OBJ)
@dataclass(frozen=True)
class BundleEntry:
    mintette_id: str
    addr_id: AddrId
    vote: Vote


@record(0x23, entries=List(OBJ))
@dataclass(frozen=True)
class EvidenceBundle:
    entries: tuple[BundleEntry, ...] = ()

    @classmethod
    def from_votes(cls, votes: dict[tuple[str, AddrId], Vote]) -> "EvidenceBundle":
        items = sorted(votes.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return cls(tuple(BundleEntry(m, a, v) for (m, a), v in items))

    @cached_property
    def mapping(self) -> dict[tuple[str, AddrId], Vote]:
        return {(e.mintette_id, e.addr_id): e.vote for e in self.entries}

    def get(self, mintette_id: str, addr_id: AddrId) -> Optional[Vote]:
        return self.mapping.get((mintette_id, addr_id))

    def __len__(self) -> int:
        return len(self.entries)


@record(0x24, mintette_id=STR, head=HASH, seq=U64)
@dataclass(frozen=True)
class HeadRef:
    mintette_id: str
    head: Hash
    seq: int


class ActionKind(enum.Enum):
    QUERY = "Query"
    COMMIT = "Commit"
    CLOSE_EPOCH = "CloseEpoch"


@record(0x25, tx=OBJ, addr_id=OBJ)
@dataclass(frozen=True)
class QueryAction:
    tx: Transaction
    addr_id: AddrId
    kind = ActionKind.QUERY


@record(0x26, tx=OBJ, bundle=OBJ)
@dataclass(frozen=True)
class CommitAction:
    tx: Transaction
    bundle: EvidenceBundle
    kind = ActionKind.COMMIT


@record(0x27, heads=List(OBJ))
@dataclass(frozen=True)
class CloseEpochAction:
    heads: tuple[HeadRef, ...]
    kind = ActionKind.CLOSE_EPOCH


LogEntry = Union[QueryAction, CommitAction, CloseEpochAction]


def chain_step(entry: LogEntry, prev: Hash) -> Hash:
    return H(encode(entry), prev)


def fold_heads(log) -> list[Hash]:
    """Heads h_0..h_n of a log; h_0 is the empty-log head."""
    heads = [GENESIS_HEAD]
    for entry in log:
        heads.append(chain_step(entry, heads[-1]))
    return heads


def entry_refs(entry: LogEntry) -> list[HeadRef]:
    """Foreign heads an entry absorbs: bundle votes or a CloseEpoch list."""
    if isinstance(entry, CommitAction):
        return [HeadRef(e.mintette_id, e.vote.head, e.vote.seq) for e in entry.bundle.entries]
    if isinstance(entry, CloseEpochAction):
        return list(entry.heads)
    return []


@record(0x28, addr_id=OBJ, first=OBJ, second=OBJ)
@dataclass(frozen=True)
class DoubleSpendEvidence:
    addr_id: AddrId
    first: Transaction
    second: Transaction


@record(
    0x29,
    mintette_id=STR,
    pk=BYTES,
    period=U64,
    epoch=U64,
    h=HASH,
    txset=List(OBJ),
    sigma=BYTES,
    mset=List(HASH),
    evidence=List(OBJ),
)
@dataclass(frozen=True)
class LowerBlock:
    mintette_id: str
    pk: bytes
    period: int
    epoch: int
    h: Hash
    txset: tuple[Transaction, ...]
    sigma: bytes
    mset: tuple[Hash, ...]
    # for auditors; signed but outside h
    evidence: tuple[DoubleSpendEvidence, ...] = ()


def lower_block_hash(bank_hash_prev: Hash, prev_own: Hash, mset, txset) -> Hash:
    return H(bank_hash_prev, prev_own, b"".join(mset), encode_many(sorted_txs(txset)))


@record(0x2C, mintette_id=STR, pk=BYTES, period=U64, epoch=U64, h=HASH, evidence=List(OBJ))
@dataclass(frozen=True)
class LowerBlockHeader:
    """What a mintette signs: the block hash bound to who, when and why."""

    mintette_id: str
    pk: bytes
    period: int
    epoch: int
    h: Hash
    evidence: tuple


def lower_block_statement(mintette_id: str, pk: bytes, period: int, epoch: int, h: Hash, evidence) -> bytes:
    return encode(LowerBlockHeader(mintette_id, pk, period, epoch, h, tuple(evidence)))


def verify_lower_block(
    block: LowerBlock,
    bank_hash_prev: Hash,
    prev_own_hash: Hash,
    shard_map: ShardMap,
    bank_pk: bytes,
) -> Verdict:
    """The four lower-block validity checks, first failure reported.

    The txset must already be in canonical order, otherwise a padded or
    reordered set would share a hash with the honest one.
    """
    if tuple(block.txset) != sorted_txs(block.txset):
        return Verdict(False, "NonCanonicalTxset")
    if block.h != lower_block_hash(bank_hash_prev, prev_own_hash, block.mset, block.txset):
        return Verdict(False, "HashMismatch")
    stmt = lower_block_statement(block.mintette_id, block.pk, block.period, block.epoch, block.h, block.evidence)
    if not crypto.verify(block.pk, stmt, block.sigma):
        return Verdict(False, "BadSignature")
    info = next((m for m in shard_map.mintettes if m.pk == block.pk), None)
    if info is None or info.mintette_id != block.mintette_id:
        return Verdict(False, "Unauthorized")
    if not crypto.verify(bank_pk, authorization_message(info.pk, block.period), info.bank_sig):
        return Verdict(False, "BadAuthorization")
    if shard_map.period != block.period:
        return Verdict(False, "BadAuthorization")
    return Verdict(True)


def verify_lower_chain(
    blocks, bank_hash_prev: Hash, shard_map: ShardMap, bank_pk: bytes
) -> Verdict:
    prev = GENESIS_BLOCK_HASH
    for b in blocks:
        v = verify_lower_block(b, bank_hash_prev, prev, shard_map, bank_pk)
        if not v:
            return v
        prev = b.h
    return Verdict(True)


class RefusalReason(str, enum.Enum):
    INVALID_TX = "InvalidTx"
    NOT_OWNER = "NotOwner"
    DOUBLE_SPEND = "DoubleSpend"
    INSUFFICIENT_EVIDENCE = "InsufficientEvidence"
    UNAUTHORIZED_VOTER = "UnauthorizedVoter"
    BAD_VOTE_SIGNATURE = "BadVoteSignature"
    WRONG_PERIOD = "WrongPeriod"


@record(0x2A, reason=STR, detail=STR, conflict=Opt(HASH))
@dataclass(frozen=True)
class Refusal:
    reason: str
    detail: str = ""
    conflict: Optional[Hash] = None

    def __bool__(self) -> bool:
        return False


def _refuse(reason: RefusalReason, detail: str = "", conflict: Optional[Hash] = None) -> Refusal:
    return Refusal(reason.value, detail, conflict)


@dataclass
class EpochPolicy:
    """Close an epoch after ``max_entries`` log entries or ``interval`` seconds."""

    max_entries: int = 1000
    interval: float = 1.0


class Mintette:
    """One mintette's state for the current period.

    All operations are synchronous and must be serialized by the caller;
    each call is one atomic state transition.
    """

    def __init__(
        self,
        mintette_id: str,
        keypair: crypto.KeyPair,
        *,
        quorum: Optional[int] = None,
        epoch_policy: Optional[EpochPolicy] = None,
        wal_path: Optional[Path] = None,
    ):
        self.id = mintette_id
        self.keypair = keypair
        self.quorum_override = quorum
        self.epoch_policy = epoch_policy or EpochPolicy()
        self.wal_path = Path(wal_path) if wal_path else None
        self.shard_map: Optional[ShardMap] = None
        self.period = 0
        self.bank_hash = BANK_GENESIS_HASH
        self._reset({})

    @property
    def pk(self) -> bytes:
        return self.keypair.pk

    def _reset(self, utxo: dict[AddrId, Output]) -> None:
        self.utxo: dict[AddrId, Output] = dict(utxo)
        self.spent: dict[AddrId, Output] = {}
        self.pset: dict[AddrId, Hash] = {}
        self.txset: dict[Hash, Transaction] = {}
        self.committed: set[Hash] = set()
        self.seen: dict[Hash, Transaction] = {}
        self.log: list[LogEntry] = []
        self.head = GENESIS_HEAD
        self.known_heads: dict[str, HeadRef] = {}
        self.double_spends: list[DoubleSpendEvidence] = []
        self.lower_blocks: list[LowerBlock] = []
        self.prev_block_hash = GENESIS_BLOCK_HASH
        self.epoch = 0
        self.epoch_entries = 0

    @property
    def seq(self) -> int:
        return len(self.log)

    @property
    def quorum(self) -> int:
        q = self.shard_map.quorum if self.shard_map else 1
        if self.quorum_override is not None:
            return max(q, min(self.quorum_override, self.shard_map.shard_size))
        return q

    def begin_period(self, shard_map: ShardMap, bank_hash: Hash, utxo: dict[AddrId, Output]) -> None:
        """Start ``shard_map.period`` with the owned slice of the ledger's UTXO set."""
        self.shard_map = shard_map
        self.period = shard_map.period
        self.bank_hash = bank_hash
        self._reset({a: o for a, o in utxo.items() if self.id in shard_map.owners(a)})
        if self.wal_path is not None:
            self.wal_path.parent.mkdir(parents=True, exist_ok=True)
            snap = self.wal_path.with_suffix(f".p{self.period}.utxo")
            snap.write_bytes(encode_many([_UtxoRecord(a, o) for a, o in sorted(self.utxo.items())]))
            self.wal_path.write_bytes(b"")

    # -- log -----------------------------------------------------------------

    def _append(self, entry: LogEntry) -> None:
        self.log.append(entry)
        self.head = chain_step(entry, self.head)
        self.epoch_entries += 1
        if self.wal_path is not None:
            raw = encode(entry)
            with open(self.wal_path, "ab") as fh:
                fh.write(struct.pack(">I", len(raw)) + raw)

    def _sign_vote(self, tx_hash: Hash, addr_id: Optional[AddrId]) -> Vote:
        msg = encode(VoteStatement(tx_hash, addr_id, self.head, self.seq))
        return Vote(self.pk, self.keypair.sign(msg), self.head, self.seq)

    def _resolver(self, tx: Transaction):
        claimed = {i.addr_id: claimed_output(i) for i in tx.inputs}

        def resolve(a: AddrId) -> Optional[Output]:
            if self.id in self.shard_map.owners(a):
                return self.utxo.get(a) or self.spent.get(a)
            return claimed.get(a)

        return resolve

    def _owns(self, addr_id: AddrId) -> bool:
        return self.id in self.shard_map.owners(addr_id)

    # -- 2PC -----------------------------------------------------------------

    def check_not_double_spent(self, tx: Transaction, addr_id: AddrId) -> Union[Vote, Refusal]:
        """Phase-1 vote on one input of ``tx``."""
        if tx.kind != TxKind.NORMAL or addr_id not in tx.addr_ids:
            return _refuse(RefusalReason.INVALID_TX, "not a normal input of tx")
        verdict = check_tx(tx, self._resolver(tx), self.period)
        if not verdict:
            return _refuse(RefusalReason.INVALID_TX, verdict.reason.value)
        if not self._owns(addr_id):
            return _refuse(RefusalReason.NOT_OWNER)
        h = tx.hash
        if self._may_vote(addr_id, h):
            out = self.utxo.pop(addr_id, None)
            if out is not None:
                self.spent[addr_id] = out
            self.pset[addr_id] = h
            self.seen.setdefault(h, tx)
            self._append(QueryAction(tx, addr_id))
            vote = self._sign_vote(h, addr_id)
            self._maybe_seal()
            return vote
        other = self.pset.get(addr_id)
        if other is not None and other in self.seen:
            self.double_spends.append(DoubleSpendEvidence(addr_id, self.seen[other], tx))
        return _refuse(RefusalReason.DOUBLE_SPEND, repr(addr_id), other)

    def _may_vote(self, addr_id: AddrId, h: Hash) -> bool:
        return addr_id in self.utxo or self.pset.get(addr_id) == h

    def check_bundle(self, tx: Transaction, bundle: EvidenceBundle) -> Optional[Refusal]:
        """None if ``bundle`` proves a quorum of owners voted for every input."""
        smap = self.shard_map
        needed = {(m, a) for a in tx.addr_ids for m in smap.owners(a)}
        for e in bundle.entries:
            if (e.mintette_id, e.addr_id) not in needed:
                return _refuse(RefusalReason.UNAUTHORIZED_VOTER, f"{e.mintette_id} not an input owner")
        h = tx.hash
        for a in tx.addr_ids:
            count = 0
            for m in smap.owners(a):
                vote = bundle.get(m, a)
                if vote is None:
                    continue
                if vote.pk != smap.pk(m):
                    return _refuse(RefusalReason.UNAUTHORIZED_VOTER, m)
                if not vote.verify(h, a):
                    return _refuse(RefusalReason.BAD_VOTE_SIGNATURE, m)
                count += 1
            if count < self.quorum:
                return _refuse(RefusalReason.INSUFFICIENT_EVIDENCE, f"{count} votes for {a!r}")
        return None

    def commit_tx(self, tx: Transaction, period: int, bundle: EvidenceBundle) -> Union[Vote, Refusal]:
        """Phase-2 commit; returns a signed confirmation over (tx, head, seq)."""
        if tx.kind != TxKind.NORMAL:
            return _refuse(RefusalReason.INVALID_TX, "not a normal tx")
        verdict = check_tx(tx, self._resolver(tx), self.period)
        if not verdict:
            return _refuse(RefusalReason.INVALID_TX, verdict.reason.value)
        h = tx.hash
        if self.id not in self.shard_map.owners_of_tx(h):
            return _refuse(RefusalReason.NOT_OWNER)
        if period != self.period:
            return _refuse(RefusalReason.WRONG_PERIOD, f"{period} != {self.period}")
        refusal = self.check_bundle(tx, bundle)
        if refusal is not None:
            return refusal
        self._apply_commit(tx)
        self._append(CommitAction(tx, bundle))
        self._absorb(bundle)
        vote = self._sign_vote(h, None)
        self._maybe_seal()
        return vote

    def _apply_commit(self, tx: Transaction) -> None:
        h = tx.hash
        if h in self.committed:
            return
        self.committed.add(h)
        for a, o in zip(tx.output_ids(), tx.outputs):
            self.utxo[a] = o
        self.txset[h] = tx

    def _absorb(self, bundle: EvidenceBundle) -> None:
        for e in bundle.entries:
            if e.mintette_id == self.id:
                continue
            cur = self.known_heads.get(e.mintette_id)
            if cur is None or e.vote.seq > cur.seq:
                self.known_heads[e.mintette_id] = HeadRef(e.mintette_id, e.vote.head, e.vote.seq)

    # -- epochs and blocks -----------------------------------------------------

    def close_epoch(self, known_heads: Optional[list[HeadRef]] = None) -> Hash:
        heads = known_heads if known_heads is not None else self.latest_foreign_heads()
        self._append(CloseEpochAction(tuple(heads)))
        self.epoch_entries = 0
        return self.head

    def latest_foreign_heads(self) -> list[HeadRef]:
        return [self.known_heads[m] for m in sorted(self.known_heads)]

    def form_lower_block(self, bank_hash_prev: Optional[Hash] = None) -> LowerBlock:
        bank_prev = self.bank_hash if bank_hash_prev is None else bank_hash_prev
        mset = tuple(r.head for r in self.latest_foreign_heads())
        txs = sorted_txs(self.txset.values())
        h = lower_block_hash(bank_prev, self.prev_block_hash, mset, txs)
        evidence = tuple(self.double_spends)
        stmt = lower_block_statement(self.id, self.pk, self.period, self.epoch, h, evidence)
        block = LowerBlock(self.id, self.pk, self.period, self.epoch, h, txs, self.keypair.sign(stmt), mset, evidence)
        self.lower_blocks.append(block)
        self.prev_block_hash = h
        self.txset = {}
        self.double_spends = []
        self.epoch += 1
        return block

    def seal_epoch(self) -> LowerBlock:
        self.close_epoch()
        return self.form_lower_block()

    def epoch_full(self) -> bool:
        return self.epoch_entries >= self.epoch_policy.max_entries

    def _maybe_seal(self) -> None:
        if self.epoch_full():
            self.seal_epoch()

    def end_period(self) -> tuple[list[LowerBlock], list[LogEntry]]:
        """Seal the last epoch and hand over this period's blocks and log."""
        if self.epoch_entries or not self.lower_blocks or self.txset:
            self.seal_epoch()
        return list(self.lower_blocks), list(self.log)


@record(0x2B, addr_id=OBJ, output=OBJ)
@dataclass(frozen=True)
class _UtxoRecord:
    addr_id: AddrId
    output: Output
