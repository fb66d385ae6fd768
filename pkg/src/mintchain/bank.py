"""The central bank: authorization, higher-level blocks, fees, pruning."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from . import crypto
from .core import (
    AddrId,
    Output,
    Transaction,
    TxKind,
    UtxoSet,
    Verdict,
    make_tx,
    sorted_txs,
    topological_order,
)
from .crypto import H, Hash
from .encoding import BYTES, HASH, OBJ, STR, U64, List, Tuple, decode, encode, encode_many, record
from .mintette import (
    BANK_GENESIS_HASH,
    CommitAction,
    LogEntry,
    LowerBlock,
    QueryAction,
    fold_heads,
    verify_lower_chain,
)
from .sharding import ShardMap, authorization_message as auth_statement, build_shard_map


@record(0x30, period=U64, h=HASH, txset=List(OBJ), sigma=BYTES, next_shard_map=OBJ)
@dataclass(frozen=True)
class HigherBlock:
    period: int
    h: Hash
    txset: tuple[Transaction, ...]
    sigma: bytes
    # mintettes authorized for period + 1, each with the bank's signature
    next_shard_map: ShardMap


def higher_block_hash(prev_bank_hash: Hash, txset) -> Hash:
    return H(prev_bank_hash, encode_many(sorted_txs(txset)))


@record(0x38, period=U64, h=HASH, next_shard_map=OBJ)
@dataclass(frozen=True)
class HigherBlockHeader:
    period: int
    h: Hash
    next_shard_map: ShardMap


def higher_block_statement(period: int, h: Hash, next_shard_map: ShardMap) -> bytes:
    return encode(HigherBlockHeader(period, h, next_shard_map))


def verify_higher_block(block: HigherBlock, prev_bank_hash: Hash, bank_pk: bytes) -> Verdict:
    if tuple(block.txset) != sorted_txs(block.txset):
        return Verdict(False, "NonCanonicalTxset")
    if block.h != higher_block_hash(prev_bank_hash, block.txset):
        return Verdict(False, "HashMismatch")
    if not crypto.verify(bank_pk, higher_block_statement(block.period, block.h, block.next_shard_map), block.sigma):
        return Verdict(False, "BadSignature")
    nxt = block.next_shard_map
    if nxt.period != block.period + 1:
        return Verdict(False, "BadAuthorization")
    for m in nxt.mintettes:
        if not crypto.verify(bank_pk, auth_statement(m.pk, block.period + 1), m.bank_sig):
            return Verdict(False, "BadAuthorization")
    return Verdict(True)


def authorize_period(period: int, mintette_keys, shard_size: int, bank: crypto.KeyPair) -> ShardMap:
    return build_shard_map(period, list(mintette_keys), shard_size, bank)


def merge_optimistic(lower_blocks: Iterable[LowerBlock]) -> tuple[Transaction, ...]:
    """Union of every block's txset, deduplicated by hash."""
    return sorted_txs(tx for b in lower_blocks for tx in b.txset)


@record(0x31, addr_id=OBJ, first=OBJ, second=OBJ, implicated=List(STR))
@dataclass(frozen=True)
class Conflict:
    addr_id: AddrId
    first: Transaction
    second: Transaction
    implicated: tuple[str, ...]


def _committers(logs: Mapping[str, list]) -> dict[Hash, set[str]]:
    out: dict[Hash, set[str]] = defaultdict(set)
    for mid, log in logs.items():
        for e in log:
            if isinstance(e, CommitAction):
                out[e.tx.hash].add(mid)
    return out


def _voters(logs: Mapping[str, list]) -> dict[tuple[AddrId, Hash], set[str]]:
    """(input, tx) -> mintettes whose signed votes for it were ferried into a bundle."""
    out: dict[tuple[AddrId, Hash], set[str]] = defaultdict(set)
    for log in logs.values():
        for e in log:
            if isinstance(e, CommitAction):
                for be in e.bundle.entries:
                    if be.vote.verify(e.tx.hash, be.addr_id):
                        out[(be.addr_id, e.tx.hash)].add(be.mintette_id)
    return out


def find_conflicts(txs, logs: Mapping[str, list], shard_map: ShardMap) -> list[Conflict]:
    """Every pair of transactions in ``txs`` spending one input, with culprits.

    Implicated: mintettes whose logs commit both, plus input owners whose
    votes back both.
    """
    spenders: dict[AddrId, list[Transaction]] = defaultdict(list)
    for tx in sorted_txs(txs):
        for a in tx.addr_ids:
            spenders[a].append(tx)
    committers = _committers(logs)
    voters = _voters(logs)
    conflicts = []
    for a, group in sorted(spenders.items()):
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                t1, t2 = group[i], group[j]
                # owners depend on the addrid alone, so both spends hit one shard
                both = (committers[t1.hash] & committers[t2.hash]) | (
                    voters[(a, t1.hash)] & voters[(a, t2.hash)]
                )
                conflicts.append(Conflict(a, t1, t2, tuple(sorted(both))))
    return conflicts


def _without_descendants(txs, removed: set[Hash]) -> list[Transaction]:
    keep = []
    gone = set(removed)
    for tx in topological_order(txs):
        if tx.hash in gone or any(a.tx_hash in gone for a in tx.addr_ids):
            gone.add(tx.hash)
        else:
            keep.append(tx)
    return keep


def merge_vigilant(
    lower_blocks: Mapping[str, list[LowerBlock]],
    logs: Mapping[str, list],
    shard_map: ShardMap,
    bank_pk: bytes,
    bank_hash_prev: Hash,
) -> tuple[tuple[Transaction, ...], list[Conflict], list[str]]:
    """Merge while removing double-spends and their descendants.

    Returns (txset, conflicts, rejected mintettes).  A mintette is
    rejected when its block chain fails verification or its blocks carry
    a transaction its own log never committed; its blocks are excluded.
    """
    rejected = []
    accepted: list[LowerBlock] = []
    for mid in sorted(lower_blocks):
        blocks = lower_blocks[mid]
        committed = {e.tx.hash for e in logs.get(mid, ()) if isinstance(e, CommitAction)}
        ok = verify_lower_chain(blocks, bank_hash_prev, shard_map, bank_pk)
        ok = ok and all(tx.hash in committed for b in blocks for tx in b.txset)
        if ok:
            accepted += blocks
        else:
            rejected.append(mid)
    merged = merge_optimistic(accepted)
    conflicts = find_conflicts(merged, logs, shard_map)
    bad = {c.first.hash for c in conflicts} | {c.second.hash for c in conflicts}
    return sorted_txs(_without_descendants(merged, bad)), conflicts, rejected


@dataclass
class FeeTally:
    credits: dict[str, int] = field(default_factory=dict)
    fee_per_certification: int = 1
    # (mintette, seq, reason) for published entries contradicted by signed votes
    flagged: list[tuple[str, int, str]] = field(default_factory=list)
    uncredited: list[tuple[str, int]] = field(default_factory=list)

    def amounts(self) -> dict[str, int]:
        return {m: c * self.fee_per_certification for m, c in sorted(self.credits.items()) if c}

    def total(self) -> int:
        return sum(self.amounts().values())


def compute_fees(logs: Mapping[str, list], fee_per_certification: int = 1) -> FeeTally:
    """Credit phase-1 work that a committed bundle corroborates.

    A Query entry earns one credit when some Commit entry (in any log)
    carries a vote from the same mintette whose (head, seq) is exactly the
    head after that entry.  Pure function of the logs.
    """
    referenced: dict[str, dict[int, set]] = defaultdict(lambda: defaultdict(set))
    for log in logs.values():
        for e in log:
            if isinstance(e, CommitAction):
                h = e.tx.hash
                for be in e.bundle.entries:
                    if be.vote.verify(h, be.addr_id):
                        referenced[be.mintette_id][be.vote.seq].add((h, be.addr_id, be.vote.head))

    tally = FeeTally({m: 0 for m in logs}, fee_per_certification)
    for mid in sorted(logs):
        log = logs[mid]
        heads = fold_heads(log)
        for seq, claims in sorted(referenced.get(mid, {}).items()):
            for _, _, head in claims:
                if seq > len(log) or heads[seq] != head:
                    tally.flagged.append((mid, seq, "LogFork"))
                    break
        for i, e in enumerate(log):
            if not isinstance(e, QueryAction):
                continue
            seq = i + 1
            if (e.tx.hash, e.addr_id, heads[seq]) in referenced.get(mid, {}).get(seq, ()):
                tally.credits[mid] += 1
            else:
                tally.uncredited.append((mid, seq))
    return tally


def _generation_tx(bank_addr: bytes, amount: int, period: int) -> Transaction:
    return Transaction(
        TxKind.COIN_GENERATION, (), (Output(bank_addr, amount),), b"gen:" + str(period).encode()
    )


def fee_payout_tx(
    bank: crypto.KeyPair,
    funds: Mapping[AddrId, Output],
    amounts: Mapping[bytes, int],
    period: int,
) -> Optional[Transaction]:
    """One bank-signed transaction paying every earned fee, change to the bank."""
    total = sum(amounts.values())
    if total == 0:
        return None
    coins, have = [], 0
    for a in sorted(funds, key=lambda a: (-a.value, a)):
        if have >= total:
            break
        coins.append(a)
        have += a.value
    if have < total:
        raise ValueError(f"fee sum {total} exceeds bank balance {have}")
    outs = [(addr, v) for addr, v in amounts.items() if v]
    if have > total:
        outs.append((bank.pk, have - total))
    return make_tx([(a, bank) for a in coins], outs, TxKind.FEE_PAYOUT, b"fees:" + str(period).encode())


def form_higher_block(
    bank: crypto.KeyPair,
    period: int,
    prev_bank_hash: Hash,
    txset,
    next_shard_map: ShardMap,
    fee_tally: Optional[FeeTally] = None,
    *,
    shard_map: Optional[ShardMap] = None,
    bank_funds: Optional[Mapping[AddrId, Output]] = None,
    emission: int = 0,
) -> HigherBlock:
    """Seal ``txset`` plus coin generation and fee payouts into a signed block."""
    txs = list(txset)
    gen = _generation_tx(bank.pk, emission, period)
    txs.append(gen)
    if fee_tally is not None and fee_tally.total():
        if shard_map is None:
            raise ValueError("paying fees needs the period's shard map")
        funds = dict(bank_funds or {})
        for a, o in zip(gen.output_ids(), gen.outputs):
            funds[a] = o
        amounts = {shard_map.pk(m): v for m, v in fee_tally.amounts().items()}
        payout = fee_payout_tx(bank, funds, amounts, period)
        txs.append(payout)
    txs = sorted_txs(txs)
    h = higher_block_hash(prev_bank_hash, txs)
    return HigherBlock(period, h, txs, bank.sign(higher_block_statement(period, h, next_shard_map)), next_shard_map)


# -- pruning -------------------------------------------------------------------


def prune_chains(
    txs,
    bank: crypto.KeyPair,
    observed: frozenset = frozenset(),
) -> tuple[tuple[Transaction, ...], dict[Hash, Hash]]:
    """Collapse same-period spend chains into single bank-signed transactions.

    Normal transactions linked by spends inside ``txs`` form components;
    each component with two or more members becomes one transaction from
    its external inputs to its terminal outputs (outputs to one address
    merged).  Components touching a hash in ``observed`` are kept as is.
    Returns the new set and a map from each replaced hash to its
    replacement.
    """
    ordered = topological_order(txs)
    by_hash = {tx.hash: tx for tx in ordered}
    parent = {h: h for h in by_hash}

    def find(h):
        while parent[h] != h:
            parent[h] = parent[parent[h]]
            h = parent[h]
        return h

    prunable = {h for h, tx in by_hash.items() if tx.kind == TxKind.NORMAL}
    for tx in ordered:
        if tx.hash not in prunable:
            continue
        for a in tx.addr_ids:
            if a.tx_hash in prunable:
                parent[find(a.tx_hash)] = find(tx.hash)

    groups: dict[Hash, list[Transaction]] = defaultdict(list)
    for tx in ordered:
        if tx.hash in prunable:
            groups[find(tx.hash)].append(tx)

    result = [tx for tx in ordered if tx.hash not in prunable]
    mapping: dict[Hash, Hash] = {}
    for members in groups.values():
        hashes = {t.hash for t in members}
        if len(members) == 1 or hashes & observed:
            result += members
            continue
        produced = {a for t in members for a in t.output_ids()}
        consumed = {a for t in members for a in t.addr_ids}
        ext_inputs = sorted(a for a in consumed if a not in produced)
        merged: dict = {}
        for t in members:
            for a, o in zip(t.output_ids(), t.outputs):
                if a not in consumed:
                    merged[o.addr] = merged.get(o.addr, 0) + o.value
        memo = b"pruned:" + H(*sorted(hashes))
        collapsed = make_tx([(a, bank) for a in ext_inputs], list(merged.items()), TxKind.PRUNED, memo)
        result.append(collapsed)
        for h in hashes:
            mapping[h] = collapsed.hash
    return sorted_txs(result), mapping


# -- archive -------------------------------------------------------------------


@record(0x32, mintette_id=STR, entries=List(OBJ))
@dataclass(frozen=True)
class MintetteLog:
    mintette_id: str
    entries: tuple[LogEntry, ...]


@record(
    0x33,
    period=U64,
    prev_bank_hash=HASH,
    shard_map=OBJ,
    lower_blocks=List(OBJ),
    logs=List(OBJ),
    merged_txset=List(OBJ),
    prune_map=List(Tuple(HASH, HASH)),
    conflicts=List(OBJ),
    excluded=List(STR),
)
@dataclass(frozen=True)
class PeriodLogs:
    """Everything the bank publishes next to a higher block for auditors."""

    period: int
    prev_bank_hash: Hash
    shard_map: ShardMap
    lower_blocks: tuple[LowerBlock, ...]
    logs: tuple[MintetteLog, ...]
    # user transactions before pruning and bank additions
    merged_txset: tuple[Transaction, ...]
    prune_map: tuple[tuple[Hash, Hash], ...] = ()
    conflicts: tuple[Conflict, ...] = ()
    excluded: tuple[str, ...] = ()

    def log_map(self) -> dict[str, list]:
        return {l.mintette_id: list(l.entries) for l in self.logs}

    def blocks_by_mintette(self) -> dict[str, list[LowerBlock]]:
        out: dict[str, list[LowerBlock]] = defaultdict(list)
        for b in self.lower_blocks:
            out[b.mintette_id].append(b)
        return dict(out)


@dataclass(frozen=True)
class PeriodArchive:
    block: HigherBlock
    logs: PeriodLogs

    @property
    def period(self) -> int:
        return self.block.period

    def write(self, directory: Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        bp = directory / f"period-{self.period}.block"
        lp = directory / f"period-{self.period}.logs"
        bp.write_bytes(encode(self.block))
        lp.write_bytes(encode(self.logs))
        return bp, lp

    @classmethod
    def read(cls, block_path: Path, logs_path: Path) -> "PeriodArchive":
        block = decode(Path(block_path).read_bytes())
        logs = decode(Path(logs_path).read_bytes())
        if not isinstance(block, HigherBlock) or not isinstance(logs, PeriodLogs):
            raise ValueError("not a period archive")
        return cls(block, logs)


class Bank:
    """Single logical writer over the chain of higher-level blocks."""

    def __init__(
        self,
        keypair: crypto.KeyPair,
        *,
        shard_size: int = 3,
        emission: int = 0,
        fee_per_certification: int = 1,
        vigilant: bool = False,
        prune: bool = False,
    ):
        self.keypair = keypair
        self.shard_size = shard_size
        self.emission = emission
        self.fee_per_certification = fee_per_certification
        self.vigilant = vigilant
        self.prune = prune
        self.chain: list[HigherBlock] = []
        self.archives: list[PeriodArchive] = []
        self.utxo = UtxoSet()
        self.shard_map: Optional[ShardMap] = None
        self.mintettes: list[tuple[str, bytes]] = []

    @property
    def pk(self) -> bytes:
        return self.keypair.pk

    @property
    def head(self) -> Hash:
        return self.chain[-1].h if self.chain else BANK_GENESIS_HASH

    @property
    def period(self) -> int:
        """The period currently open for transactions."""
        return self.shard_map.period if self.shard_map else 0

    def funds(self) -> dict[AddrId, Output]:
        return {a: o for a, o in self.utxo.outputs.items() if o.addr == self.pk}

    def authorize_period(self, period: int, mintettes, shard_size: Optional[int] = None) -> ShardMap:
        return authorize_period(period, mintettes, shard_size or self.shard_size, self.keypair)

    def genesis(
        self,
        mintettes: list[tuple[str, bytes]],
        allocations: list[tuple[bytes, int]],
        reserve: int = 0,
    ) -> HigherBlock:
        """Block 0: one generation tx per allocation, plus the bank's reserve."""
        if self.chain:
            raise RuntimeError("genesis already formed")
        self.mintettes = list(mintettes)
        txs = [
            Transaction(TxKind.COIN_GENERATION, (), (Output(addr, v),), b"alloc:%d" % i)
            for i, (addr, v) in enumerate(allocations)
        ]
        if reserve:
            txs.append(Transaction(TxKind.COIN_GENERATION, (), (Output(self.pk, reserve),), b"reserve"))
        nxt = self.authorize_period(1, self.mintettes)
        txs = sorted_txs(txs)
        h = higher_block_hash(self.head, txs)
        block = HigherBlock(0, h, txs, self.keypair.sign(higher_block_statement(0, h, nxt)), nxt)
        self._publish(block)
        return block

    def _publish(self, block: HigherBlock) -> None:
        self.replay_skipped = self.utxo.apply_all(block.txset, strict=False)
        self.chain.append(block)
        self.shard_map = block.next_shard_map

    def utxo_slice(self, mintette_id: str) -> dict[AddrId, Output]:
        smap = self.shard_map
        return {a: o for a, o in self.utxo.outputs.items() if mintette_id in smap.owners(a)}

    def merge(self, blocks, logs, shard_map: ShardMap, prev: Hash):
        """(txset, conflicts, rejected mintettes) for this period's lower blocks."""
        if self.vigilant:
            return merge_vigilant(blocks, logs, shard_map, self.pk, prev)
        return merge_optimistic(b for bs in blocks.values() for b in bs), [], []

    def close_period(
        self,
        lower_blocks: Mapping[str, list[LowerBlock]],
        logs: Mapping[str, list],
        next_mintettes: Optional[list[tuple[str, bytes]]] = None,
        excluded: Iterable[str] = (),
    ) -> PeriodArchive:
        """Merge the period's lower blocks into the next higher block and publish."""
        smap = self.shard_map
        prev = self.head
        excluded = set(excluded)
        blocks = {m: bs for m, bs in lower_blocks.items() if m not in excluded}
        merged, conflicts, rejected = self.merge(blocks, logs, smap, prev)
        excluded |= set(rejected)
        tally = compute_fees({m: l for m, l in logs.items() if m not in excluded}, self.fee_per_certification)
        txset = merged
        prune_map: dict[Hash, Hash] = {}
        if self.prune:
            txset, prune_map = prune_chains(merged, self.keypair)
        if next_mintettes is not None:
            self.mintettes = list(next_mintettes)
        nxt = self.authorize_period(smap.period + 1, self.mintettes)
        block = form_higher_block(
            self.keypair,
            smap.period,
            prev,
            txset,
            nxt,
            tally,
            shard_map=smap,
            bank_funds=self.funds(),
            emission=self.emission,
        )
        period_logs = PeriodLogs(
            smap.period,
            prev,
            smap,
            tuple(b for m in sorted(lower_blocks) for b in lower_blocks[m]),
            tuple(MintetteLog(m, tuple(logs[m])) for m in sorted(logs)),
            merged,
            tuple(sorted(prune_map.items())),
            tuple(conflicts),
            tuple(sorted(excluded)),
        )
        self._publish(block)
        archive = PeriodArchive(block, period_logs)
        self.archives.append(archive)
        self.last_fee_tally = tally
        return archive
