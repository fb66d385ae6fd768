"""Independent auditing of a published period.

Everything here is a pure function of the bank's archive (higher block,
lower blocks, action logs) and, for personal audits, the receipts a user
kept.  Every failed check carries the signed or hashed material that lets
a third party confirm it.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .bank import PeriodArchive, compute_fees, find_conflicts, verify_higher_block
from .client import TxReceipt
from .core import AddrId, Transaction, TxKind, topological_order
from .crypto import Hash
from .encoding import encode
from .mintette import (
    CommitAction,
    EvidenceBundle,
    QueryAction,
    Vote,
    entry_refs,
    fold_heads,
    verify_lower_chain,
)
from .sharding import ShardMap

BANK = "bank"


class AuditProperty(str, enum.Enum):
    DOUBLE_SPENDING = "DoubleSpending"
    NON_REPUDIABLE_SEALING = "NonRepudiableSealing"
    TIMED_PERSONAL_AUDIT = "TimedPersonalAudit"
    UNIVERSAL_AUDIT = "UniversalAudit"
    EXPOSED_INACTIVITY = "ExposedInactivity"


@dataclass(frozen=True)
class Finding:
    kind: str
    implicated: tuple[str, ...]
    detail: str = ""
    # signed votes, transactions or hashes backing the claim
    evidence: tuple = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "implicated": list(self.implicated),
            "detail": self.detail,
            "evidence": [_hexify(e) for e in self.evidence],
        }


def _hexify(obj) -> str:
    if isinstance(obj, bytes):
        return obj.hex()
    try:
        return encode(obj).hex()
    except Exception:
        return repr(obj)


@dataclass
class AuditReport:
    property: AuditProperty
    findings: list[Finding] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.findings

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def implicated(self) -> set[str]:
        return {p for f in self.findings for p in f.implicated}

    def add(self, finding: Finding) -> None:
        if finding not in self.findings:
            self.findings.append(finding)

    def to_dict(self) -> dict:
        return {
            "property": self.property.value,
            "verdict": self.verdict,
            "findings": [f.to_dict() for f in self.findings],
        }


def verify_log_chain(log: Sequence, claimed_head: Hash) -> bool:
    return fold_heads(log)[-1] == claimed_head


# -- receipts --------------------------------------------------------------------


def _receipt_claims(receipt: TxReceipt, shard_map: ShardMap):
    """(mintette, addr_id or None, vote) for every signature a receipt holds."""
    h = receipt.tx.hash
    for e in receipt.bundle.entries:
        if e.mintette_id in shard_map.by_id and e.vote.pk == shard_map.pk(e.mintette_id):
            if e.vote.verify(h, e.addr_id):
                yield e.mintette_id, e.addr_id, e.vote
    for mid, vote in sorted(receipt.confirmations.items()):
        if mid in shard_map.by_id and vote.pk == shard_map.pk(mid) and vote.verify(h, None):
            yield mid, None, vote


def _records(entry, tx_hash: Hash, addr_id: Optional[AddrId]) -> bool:
    if addr_id is None:
        return isinstance(entry, CommitAction) and entry.tx.hash == tx_hash
    return isinstance(entry, QueryAction) and entry.tx.hash == tx_hash and entry.addr_id == addr_id


def personal_audit(
    receipts: Iterable[TxReceipt], logs: Mapping[str, Sequence], shard_map: ShardMap
) -> AuditReport:
    """Check each signed (head, seq) a user holds against the published logs.

    A receipt passes when its head is the published chain's head at that
    sequence number and the entry there records the receipt's action.
    """
    report = AuditReport(AuditProperty.TIMED_PERSONAL_AUDIT)
    heads_cache: dict[str, list[Hash]] = {}
    for r in receipts:
        for mid, addr_id, vote in _receipt_claims(r, shard_map):
            log = logs.get(mid)
            if log is None:
                report.add(Finding("MissingLog", (mid,), "no published log", (vote,)))
                continue
            heads = heads_cache.setdefault(mid, fold_heads(log))
            if vote.seq < 1 or vote.seq >= len(heads):
                report.add(Finding("LogFork", (mid,), f"signed seq {vote.seq} beyond published log", (vote,)))
            elif heads[vote.seq] != vote.head:
                report.add(Finding("LogFork", (mid,), f"signed head differs at seq {vote.seq}", (vote,)))
            elif not _records(log[vote.seq - 1], r.tx.hash, addr_id):
                report.add(
                    Finding("MisrecordedAction", (mid,), f"entry {vote.seq} is not this action", (vote,))
                )
    return report


def sealing_audit(receipts: Iterable[TxReceipt], archive: PeriodArchive) -> AuditReport:
    """Sealed receipts of this period must reach the higher block."""
    report = AuditReport(AuditProperty.NON_REPUDIABLE_SEALING)
    smap = archive.logs.shard_map
    present = {tx.hash for tx in archive.block.txset}
    pruned = dict(archive.logs.prune_map)
    conflicted = {}
    for c in archive.logs.conflicts:
        conflicted[c.first.hash] = c.implicated
        conflicted[c.second.hash] = c.implicated
    for r in receipts:
        if not r.sealed or r.period != archive.period:
            continue
        h = r.tx.hash
        if h in present or pruned.get(h) in present:
            continue
        confirmations = tuple(
            v for m, v in sorted(r.confirmations.items()) if m in smap.by_id and v.verify(h, None)
        )
        if len(confirmations) < smap.quorum:
            continue
        who = conflicted.get(h) or (BANK,)
        report.add(Finding("SealedButMissing", tuple(who), h.hex(), confirmations))
    return report


# -- consensus reconstruction -------------------------------------------------------


def valid_bundle(tx: Transaction, bundle: EvidenceBundle, shard_map: ShardMap) -> bool:
    """A quorum of each input's owners signed votes for ``tx``."""
    h = tx.hash
    for a in tx.addr_ids:
        owners = shard_map.owners(a)
        good = 0
        for m in owners:
            v = bundle.get(m, a)
            if v is not None and v.pk == shard_map.pk(m) and v.verify(h, a):
                good += 1
        if good < shard_map.quorum:
            return False
    return bool(tx.inputs)


def consensus_set(logs: Mapping[str, Sequence], shard_map: ShardMap) -> dict[Hash, Transaction]:
    """Normal transactions an output owner committed on a valid bundle."""
    out: dict[Hash, Transaction] = {}
    for mid in sorted(logs):
        for e in logs[mid]:
            if not isinstance(e, CommitAction) or e.tx.hash in out:
                continue
            if e.tx.kind != TxKind.NORMAL or mid not in shard_map.owners_of_tx(e.tx.hash):
                continue
            if valid_bundle(e.tx, e.bundle, shard_map):
                out[e.tx.hash] = e.tx
    return out


def _descendants(txs: Iterable[Transaction], roots: set[Hash]) -> set[Hash]:
    gone = set(roots)
    for tx in topological_order(txs):
        if any(a.tx_hash in gone for a in tx.addr_ids):
            gone.add(tx.hash)
    return gone


def _fork_findings(logs: Mapping[str, Sequence], shard_map: ShardMap) -> list[Finding]:
    """Signed votes ferried into other logs that contradict the signer's log."""
    heads = {m: fold_heads(l) for m, l in logs.items()}
    found = []
    for mid in sorted(logs):
        for e in logs[mid]:
            if not isinstance(e, CommitAction):
                continue
            for be in e.bundle.entries:
                signer = be.mintette_id
                if signer not in heads or signer not in shard_map.by_id:
                    continue
                v = be.vote
                if v.pk != shard_map.pk(signer) or not v.verify(e.tx.hash, be.addr_id):
                    continue
                hs = heads[signer]
                if v.seq >= len(hs) or hs[v.seq] != v.head:
                    found.append(Finding("LogFork", (signer,), f"vote at seq {v.seq} seen by {mid}", (v,)))
    return found


def universal_audit(archive: PeriodArchive, bank_pk: bytes) -> AuditReport:
    """Rebuild the period from the logs and compare with what was sealed."""
    report = AuditReport(AuditProperty.UNIVERSAL_AUDIT)
    pl = archive.logs
    smap = pl.shard_map
    logs = pl.log_map()
    block = archive.block

    if not verify_higher_block(block, pl.prev_bank_hash, bank_pk):
        report.add(Finding("BadHigherBlock", (BANK,), "higher block fails verification", (block.h,)))

    blocks_by = pl.blocks_by_mintette()
    lower_holders: dict[Hash, set[str]] = defaultdict(set)
    for mid in sorted(blocks_by):
        blocks = blocks_by[mid]
        if not verify_lower_chain(blocks, pl.prev_bank_hash, smap, bank_pk):
            report.add(Finding("BadLowerBlock", (mid,), "lower block chain fails verification"))
        committed = {e.tx.hash for e in logs.get(mid, ()) if isinstance(e, CommitAction)}
        for b in blocks:
            for tx in b.txset:
                lower_holders[tx.hash].add(mid)
                if tx.hash not in committed:
                    report.add(
                        Finding("Insertion", (mid,), f"tx {tx.hash.hex()[:16]} in block, never committed", (b.h, tx))
                    )

    for f in _fork_findings(logs, smap):
        report.add(f)

    consensus = consensus_set(logs, smap)
    conflicts = find_conflicts(consensus.values(), logs, smap)
    for c in conflicts:
        report.add(
            Finding("DoubleSpend", c.implicated, repr(c.addr_id), (c.first, c.second))
        )
    removable = _descendants(
        consensus.values(), {c.first.hash for c in conflicts} | {c.second.hash for c in conflicts}
    )

    present = {tx.hash for tx in block.txset}
    pruned = dict(pl.prune_map)
    for h in sorted(consensus):
        if h in present or pruned.get(h) in present or h in removable:
            continue
        report.add(Finding("Omission", (BANK,), f"committed tx {h.hex()[:16]} not sealed", (consensus[h],)))

    claimed = [tx for tx in block.txset if tx.kind == TxKind.NORMAL] + [
        tx for tx in pl.merged_txset if tx.hash in pruned
    ]
    for tx in claimed:
        if tx.hash in consensus:
            continue
        holders = tuple(sorted(lower_holders.get(tx.hash, ()))) or (BANK,)
        report.add(Finding("Insertion", holders, f"sealed tx {tx.hash.hex()[:16]} has no valid commit", (tx,)))
    targets = set(pruned.values())
    for tx in block.txset:
        if tx.kind == TxKind.PRUNED and tx.hash not in targets:
            report.add(Finding("Insertion", (BANK,), "pruned tx without originals", (tx,)))

    _fee_check(report, archive, bank_pk)
    return report


def _fee_check(report: AuditReport, archive: PeriodArchive, bank_pk: bytes) -> None:
    """Fee payouts must be one constant rate times the credits the logs earn."""
    pl = archive.logs
    excluded = set(pl.excluded)
    tally = compute_fees({m: l for m, l in pl.log_map().items() if m not in excluded}, 1)
    credits = {pl.shard_map.pk(m): c for m, c in tally.credits.items() if c}
    paid: dict[bytes, int] = defaultdict(int)
    for tx in archive.block.txset:
        if tx.kind == TxKind.FEE_PAYOUT:
            for o in tx.outputs:
                if o.addr != bank_pk:
                    paid[o.addr] += o.value
    rates = {paid.get(pk, 0) / c for pk, c in credits.items()}
    unearned = [a for a in paid if a not in credits]
    if unearned or len(rates) > 1 or (credits and 0 in rates and paid):
        report.add(
            Finding(
                "FeeMismatch",
                (BANK,),
                "payouts are not proportional to credited phase-1 work",
                tuple(sorted(paid.items())),
            )
        )


# -- causality and inactivity ------------------------------------------------------


class Order(str, enum.Enum):
    BEFORE = "before"
    AFTER = "after"
    CONCURRENT = "concurrent"
    EQUAL = "equal"


class CausalIndex:
    """Vector clocks over published logs, built from cross-hashed heads.

    A reference to (Y, t) only counts when it matches Y's published head at
    t, so a fabricated reference adds no ordering.
    """

    def __init__(self, logs: Mapping[str, Sequence]):
        self.ids = sorted(logs)
        self.col = {m: i for i, m in enumerate(self.ids)}
        self.logs = {m: list(logs[m]) for m in self.ids}
        self.heads = {m: fold_heads(self.logs[m]) for m in self.ids}
        self._clock: dict[str, list[Optional[tuple[int, ...]]]] = {
            m: [None] * (len(self.logs[m]) + 1) for m in self.ids
        }
        for m in self.ids:
            self._clock[m][0] = tuple(0 for _ in self.ids)
        self.rejected_refs: list[tuple[str, int, str, int]] = []
        for m in self.ids:
            for s in range(1, len(self.logs[m]) + 1):
                self.clock(m, s)

    def _valid_refs(self, m: str, s: int) -> list[tuple[str, int]]:
        out = []
        for r in entry_refs(self.logs[m][s - 1]):
            hs = self.heads.get(r.mintette_id)
            if r.mintette_id == m or hs is None:
                continue
            if r.seq < len(hs) and hs[r.seq] == r.head:
                out.append((r.mintette_id, r.seq))
            else:
                self.rejected_refs.append((m, s, r.mintette_id, r.seq))
        return out

    def clock(self, m: str, s: int) -> tuple[int, ...]:
        """Vector clock after entry ``s`` of ``m``'s log (iterative DFS)."""
        if self._clock[m][s] is not None:
            return self._clock[m][s]
        stack = [(m, s)]
        visiting = set()
        while stack:
            node = stack[-1]
            x, t = node
            if self._clock[x][t] is not None:
                stack.pop()
                continue
            deps = [(x, t - 1)] + self._valid_refs(x, t)
            missing = [d for d in deps if self._clock[d[0]][d[1]] is None]
            if missing:
                if node in visiting:
                    raise ValueError(f"causal cycle through {x}@{t}")
                visiting.add(node)
                stack.extend(missing)
                continue
            vec = list(self._clock[x][t - 1])
            for y, u in deps[1:]:
                vec = [max(a, b) for a, b in zip(vec, self._clock[y][u])]
            vec[self.col[x]] = t
            self._clock[x][t] = tuple(vec)
            visiting.discard(node)
            stack.pop()
        return self._clock[m][s]

    def happened_before(self, a: tuple[str, int], b: tuple[str, int]) -> Order:
        if a == b:
            return Order.EQUAL
        (x, s), (y, t) = a, b
        if self.clock(y, t)[self.col[x]] >= s:
            return Order.BEFORE
        if self.clock(x, s)[self.col[y]] >= t:
            return Order.AFTER
        return Order.CONCURRENT


def happened_before(logs: Mapping[str, Sequence], a: tuple[str, int], b: tuple[str, int]) -> Order:
    return CausalIndex(logs).happened_before(a, b)


def _commit_positions(logs: Mapping[str, Sequence]) -> dict[Hash, list[tuple[str, int]]]:
    out: dict[Hash, list[tuple[str, int]]] = defaultdict(list)
    for m in sorted(logs):
        for i, e in enumerate(logs[m]):
            if isinstance(e, CommitAction):
                out[e.tx.hash].append((m, i + 1))
    return out


def retroactive_entries(
    logs: Mapping[str, Sequence], threshold: float = 2 / 3, index: Optional[CausalIndex] = None
) -> list[Finding]:
    """Query entries placed after their tx's commits had already spread.

    An honest vote is always cast before the commit that relies on it.  A
    Query for tx T at (X, s) is flagged when commits of T at no fewer than
    ``threshold`` of T's committers happened before (X, s).
    """
    idx = index or CausalIndex(logs)
    commits = _commit_positions(logs)
    found = []
    for m in idx.ids:
        for i, e in enumerate(idx.logs[m]):
            if not isinstance(e, QueryAction):
                continue
            where = commits.get(e.tx.hash)
            if not where:
                continue
            need = max(1, math.ceil(threshold * len(where) - 1e-9))
            before = sum(idx.happened_before(c, (m, i + 1)) is Order.BEFORE for c in where)
            if before >= need:
                found.append(
                    Finding(
                        "RetroactiveEntry",
                        (m,),
                        f"query at seq {i + 1} follows {before}/{len(where)} commits of its tx",
                        (idx.heads[m][i + 1], e.tx.hash),
                    )
                )
    return found


def inactivity_audit(
    logs: Mapping[str, Sequence],
    shard_map: ShardMap,
    *,
    min_fraction: float = 0.0,
    threshold: float = 2 / 3,
) -> AuditReport:
    """Flag shard members nobody heard from, and back-dated entries.

    A mintette counts as active when its heads appear in at least
    max(1, ceil(min_fraction * others)) other logs.
    """
    report = AuditReport(AuditProperty.EXPOSED_INACTIVITY)
    seen_by: dict[str, set[str]] = defaultdict(set)
    for m, log in logs.items():
        for e in log:
            for r in entry_refs(e):
                if r.mintette_id != m:
                    seen_by[r.mintette_id].add(m)
    assigned = sorted(mid for shard in shard_map.shards for mid in shard)
    others = max(0, len([m for m in logs if m in shard_map.by_id]) - 1)
    need = max(1, math.ceil(min_fraction * others - 1e-9))
    for mid in assigned:
        if len(seen_by.get(mid, ())) < need:
            report.add(
                Finding("Inactive", (mid,), f"heads seen in {len(seen_by.get(mid, ()))} of {others} logs")
            )
    for f in retroactive_entries(logs, threshold):
        report.add(f)
    return report


def double_spend_audit(archive: PeriodArchive) -> AuditReport:
    """No two sealed transactions may share an input."""
    report = AuditReport(AuditProperty.DOUBLE_SPENDING)
    logs = archive.logs.log_map()
    for c in find_conflicts(archive.block.txset, logs, archive.logs.shard_map):
        report.add(Finding("DoubleSpend", c.implicated or (BANK,), repr(c.addr_id), (c.first, c.second)))
    return report


def audit_period(
    archive: PeriodArchive,
    bank_pk: bytes,
    receipts: Iterable[TxReceipt] = (),
    *,
    min_fraction: float = 0.0,
    threshold: float = 2 / 3,
) -> list[AuditReport]:
    """All five property audits for one published period."""
    receipts = [r for r in receipts if r.period == archive.period]
    logs = archive.logs.log_map()
    smap = archive.logs.shard_map
    return [
        double_spend_audit(archive),
        sealing_audit(receipts, archive),
        personal_audit(receipts, logs, smap),
        universal_audit(archive, bank_pk),
        inactivity_audit(logs, smap, min_fraction=min_fraction, threshold=threshold),
    ]


def all_passed(reports: Iterable[AuditReport]) -> bool:
    return all(r.passed for r in reports)
