"""Fair exchange of two currencies, approved by a third party.

A trades ``m`` units of currency ``c1`` for ``n`` units of ``c2`` held by
B.  Each side locks its funds in an output that the other can claim with
the preimage of a hash only A knows, or that all three parties (A, B and
the approver C) can refund once a timeout period has passed.  A's lock
expires later than B's, so once A reveals the secret by claiming, B
always has time to claim in turn.

Each party runs an :class:`ExchangeSession`; sessions talk only through
canonically encoded messages and observe the two ledgers directly.
"""

from __future__ import annotations

import enum
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from . import crypto
from .bank import Bank
from .client import TxReceipt
from .core import (
    AddrId,
    Input,
    Output,
    SpendCondition,
    Transaction,
    TxKind,
    Witness,
    authorization_message,
    make_tx,
)
from .crypto import H, Hash, KeyPair
from .encoding import BYTES, OBJ, STR, U64, List, Tuple, decode, encode, record
from .mintette import Mintette
from .net.local import LocalNetwork


def currency_tag(currency: str) -> Hash:
    """Public commitment to a currency: the hash of its canonical identifier."""
    return H(encode_currency(currency))


def encode_currency(currency: str) -> bytes:
    return currency.encode("utf-8")


def build_spend_tx(
    hashes: tuple[Hash, ...],
    value: int,
    payer: KeyPair,
    redeemer_pk: bytes,
    approver_pk: bytes,
    timeout: int,
    inputs: list[AddrId],
    memo: bytes = b"",
) -> tuple[SpendCondition, Transaction]:
    """Lock ``value`` so ``redeemer_pk`` can claim it with every preimage.

    Until period ``timeout`` only the hash-locked claim works; afterwards
    only a refund signed by payer, redeemer and approver does.  Surplus
    input value returns to the payer.
    """
    cond = SpendCondition(tuple(hashes), redeemer_pk, (payer.pk, redeemer_pk, approver_pk), timeout)
    total = sum(a.value for a in inputs)
    if total < value:
        raise ValueError(f"inputs hold {total}, need {value}")
    outs: list = [(cond, value)]
    if total > value:
        outs.append((payer.pk, total - value))
    return cond, make_tx([(a, payer) for a in inputs], outs, memo=memo)


def build_refund_tx(value: int, locked: AddrId, cond: SpendCondition, to_pk: bytes) -> Transaction:
    """Unsigned refund of a locked output; cosignatures are attached later."""
    return Transaction(TxKind.NORMAL, (Input(locked, witness=Witness(cond)),), (Output(to_pk, value),))


def attach_cosigs(refund: Transaction, cosigs: list[tuple[bytes, bytes]]) -> Transaction:
    inp = refund.inputs[0]
    w = Witness(inp.witness.condition, (), tuple(cosigs))
    return Transaction(refund.kind, (Input(inp.addr_id, witness=w),), refund.outputs, refund.memo)


def sign_refund(refund: Transaction, key: KeyPair) -> bytes:
    return key.sign(authorization_message(refund, refund.inputs[0].addr_id))


def verify_refund_sig(refund: Transaction, pk: bytes, sig: bytes) -> bool:
    return crypto.verify(pk, authorization_message(refund, refund.inputs[0].addr_id), sig)


def build_claim_tx(
    locked: AddrId, cond: SpendCondition, preimages: tuple[bytes, ...], key: KeyPair, to_pk: bytes
) -> Transaction:
    """Spend a locked output through its hash-lock branch."""
    unsigned = Transaction(
        TxKind.NORMAL, (Input(locked, witness=Witness(cond, preimages)),), (Output(to_pk, locked.value),)
    )
    sig = key.sign(authorization_message(unsigned, locked))
    return Transaction(
        TxKind.NORMAL,
        (Input(locked, sig, key.pk, Witness(cond, preimages)),),
        unsigned.outputs,
    )


# -- messages ----------------------------------------------------------------------


@record(0x60, offered=STR, wanted=STR, m=U64, n=U64, t1=U64, t2=U64)
@dataclass(frozen=True)
class ExchangeTerms:
    """A gives m of ``offered`` for n of ``wanted``; locks expire at t1 (A) and t2 (B)."""

    offered: str
    wanted: str
    m: int
    n: int
    t1: int
    t2: int

    def validate(self) -> None:
        if self.offered == self.wanted:
            raise ValueError("an exchange needs two different currencies")
        if self.m <= 0 or self.n <= 0:
            raise ValueError("exchanged amounts must be positive")
        if not self.t2 < self.t1:
            raise ValueError(f"B's lock must expire first: need t2 < t1, got t2={self.t2}, t1={self.t1}")


@record(0x61, terms=OBJ, spend=OBJ, refund=OBJ, cosigs=List(Tuple(BYTES, BYTES)))
@dataclass(frozen=True)
class RefundSigRequest:
    terms: ExchangeTerms
    spend: Transaction
    refund: Transaction
    cosigs: tuple[tuple[bytes, bytes], ...]


@record(0x62, pk=BYTES, sig=BYTES)
@dataclass(frozen=True)
class RefundSig:
    pk: bytes
    sig: bytes


@record(0x63, sender=STR, recipient=STR, body=OBJ)
@dataclass(frozen=True)
class FxMessage:
    sender: str
    recipient: str
    body: object


# -- ledgers -----------------------------------------------------------------------


class Ledger:
    """One currency's network plus the lookups the exchange parties need."""

    def __init__(self, currency: str, network: LocalNetwork):
        self.currency = currency
        self.network = network

    @classmethod
    def create(cls, currency: str, allocations, *, mintettes: int = 3) -> "Ledger":
        tag = b"fx/" + encode_currency(currency)
        bank = Bank(crypto.keygen(tag + b"/bank", "test"), shard_size=3)
        nodes = [Mintette(f"{currency}-m{i}", crypto.keygen(tag + b"/m%d" % i, "test")) for i in range(mintettes)]
        net = LocalNetwork(bank, nodes)
        bank.genesis([(n.id, n.pk) for n in nodes], list(allocations), 1_000_000)
        net.start_period()
        return cls(currency, net)

    @property
    def period(self) -> int:
        return self.network.period

    def submit(self, tx: Transaction) -> TxReceipt:
        return self.network.submit(tx)

    def advance(self) -> None:
        self.network.end_period()

    def _sealed(self):
        for r in self.network.receipts:
            if r.sealed:
                yield r.tx
        for block in self.network.bank.chain:
            yield from block.txset

    def find(self, tx_hash: Hash) -> Optional[Transaction]:
        for tx in self._sealed():
            if tx.hash == tx_hash:
                return tx
        return None

    def spender_of(self, addr_id: AddrId) -> Optional[Transaction]:
        for tx in self._sealed():
            if addr_id in tx.addr_ids:
                return tx
        return None

    def coins(self, pk: bytes) -> list[AddrId]:
        return sorted(a for a, o in self.network.bank.utxo.outputs.items() if o.addr == pk)

    def balance(self, pk: bytes) -> int:
        return sum(a.value for a in self.coins(pk))

    def all_transactions(self) -> list[Transaction]:
        seen, out = set(), []
        for tx in self._sealed():
            if tx.hash not in seen:
                seen.add(tx.hash)
                out.append(tx)
        return out


# -- sessions ----------------------------------------------------------------------


class Role(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"


class Phase(str, enum.Enum):
    IDLE = "Idle"
    AWAIT_APPROVAL = "AwaitApproval"
    AWAIT_COUNTERSIG = "AwaitCountersig"
    LOCKED = "Locked"
    AWAIT_PARTNER_LOCK = "AwaitPartnerLock"
    CLAIMED = "Claimed"
    REFUNDED = "Refunded"
    REFUSED = "Refused"


# protocol moves each party makes, in order; an abort stops before one of them
MOVES = {
    Role.A: ("ask-approver", "ask-partner", "lock", "countersign", "claim"),
    Role.B: ("countersign", "ask-approver", "ask-partner", "lock"),
    Role.C: ("approve-a", "approve-b"),
}


@dataclass
class ExchangeSession:
    role: Role
    terms: ExchangeTerms
    ledgers: dict[str, Ledger]
    keys: dict[str, KeyPair]
    # public keys of every party per currency
    directory: dict[Role, dict[str, bytes]]
    approved: frozenset = frozenset()
    # number of protocol moves made before walking away; None runs to completion
    abort_after: Optional[int] = None
    claim_not_before: int = 0
    phase: Phase = Phase.IDLE
    secret: Optional[bytes] = None
    h: Optional[Hash] = None
    my_spend: Optional[Transaction] = None
    my_refund: Optional[Transaction] = None
    my_cosigs: list = field(default_factory=list)
    partner_spend: Optional[Transaction] = None
    moves: int = 0
    trace: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.role.value

    def _pk(self, role: Role, currency: str) -> bytes:
        return self.directory[role][currency]

    def _may(self, move: str) -> bool:
        expected = MOVES[self.role]
        if self.abort_after is not None and self.moves >= self.abort_after:
            return False
        assert expected[self.moves] == move, (self.role, self.moves, move)
        self.moves += 1
        return True

    def _send(self, to: Role, body) -> list[bytes]:
        self.trace.append((self.name, "send", to.value, type(body).__name__))
        return [encode(FxMessage(self.name, to.value, body))]

    # -- A and B -------------------------------------------------------------

    @property
    def _give(self) -> str:
        return self.terms.offered if self.role is Role.A else self.terms.wanted

    @property
    def _get(self) -> str:
        return self.terms.wanted if self.role is Role.A else self.terms.offered

    @property
    def _partner(self) -> Role:
        return Role.B if self.role is Role.A else Role.A

    def _make_lock(self) -> RefundSigRequest:
        t = self.terms
        give = self._give
        value, timeout = (t.m, t.t1) if self.role is Role.A else (t.n, t.t2)
        key = self.keys[give]
        ledger = self.ledgers[give]
        coins, have = [], 0
        for a in ledger.coins(key.pk):
            if have >= value:
                break
            coins.append(a)
            have += a.value
        hashes = (self.h, currency_tag(self._get))
        cond, spend = build_spend_tx(
            hashes, value, key, self._pk(self._partner, give), self._pk(Role.C, give), timeout, coins,
            memo=b"fx-lock:" + self.name.encode(),
        )
        refund = build_refund_tx(value, spend.output_ids()[0], cond, key.pk)
        self.my_spend, self.my_refund = spend, refund
        self.my_cosigs = [(key.pk, sign_refund(refund, key))]
        self.trace.append((self.name, "build", give, spend.hash.hex()[:12]))
        return RefundSigRequest(t, spend, refund, tuple(self.my_cosigs))

    def start(self) -> list[bytes]:
        """A opens the exchange."""
        if self.role is not Role.A:
            raise ValueError("only A opens an exchange")
        self.terms.validate()
        if not self._may("ask-approver"):
            return []
        if self.secret is None:
            self.secret = os.urandom(32)
        self.h = H(self.secret)
        req = self._make_lock()
        self.phase = Phase.AWAIT_APPROVAL
        return self._send(Role.C, req)

    def _check_partner_lock(self, req: RefundSigRequest) -> bool:
        """B's view of A's lock, or A's view of B's: terms, amounts, keys, timeout."""
        t = self.terms
        if req.terms != t:
            return False
        cur = self._get
        value, timeout = (t.m, t.t1) if self.role is Role.B else (t.n, t.t2)
        out = req.spend.outputs[0] if req.spend.outputs else None
        if out is None or not isinstance(out.addr, SpendCondition) or out.value != value:
            return False
        cond = out.addr
        if self.role is Role.A and cond.hashes[0] != self.h:
            return False
        want = (self._pk(self._partner, cur), self._pk(self.role, cur), self._pk(Role.C, cur))
        if cond.redeem_pk != self._pk(self.role, cur) or cond.refund_pks != want:
            return False
        if cond.timeout != timeout or cond.hashes[1:] != (currency_tag(self._give),):
            return False
        refund = req.refund
        if refund.inputs[0].addr_id != req.spend.output_ids()[0] or refund.outputs != (
            Output(self._pk(self._partner, cur), value),
        ):
            return False
        signed = dict(req.cosigs)
        return all(verify_refund_sig(refund, pk, sig) for pk, sig in signed.items()) and set(signed) == {
            self._pk(self._partner, cur),
            self._pk(Role.C, cur),
        }

    def handle(self, raw: bytes) -> list[bytes]:
        msg = decode(raw)
        if not isinstance(msg, FxMessage) or msg.recipient != self.name:
            raise ValueError("misrouted exchange message")
        body = msg.body
        sender = Role(msg.sender)
        self.trace.append((self.name, "recv", sender.value, type(body).__name__))
        if self.role is Role.C:
            return self._approver(sender, body)
        if self.phase is Phase.REFUSED:
            return []
        if isinstance(body, RefundSig):
            return self._on_sig(sender, body)
        if isinstance(body, RefundSigRequest) and sender is self._partner:
            return self._countersign(body)
        return []

    def _on_sig(self, sender: Role, body: RefundSig) -> list[bytes]:
        give = self._give
        if body.pk != self._pk(sender, give) or not verify_refund_sig(self.my_refund, body.pk, body.sig):
            self.phase = Phase.REFUSED
            return []
        self.my_cosigs.append((body.pk, body.sig))
        if sender is Role.C:
            if not self._may("ask-partner"):
                return []
            self.phase = Phase.AWAIT_COUNTERSIG
            req = RefundSigRequest(self.terms, self.my_spend, self.my_refund, tuple(self.my_cosigs))
            return self._send(self._partner, req)
        # partner countersigned: the refund is complete, so locking is safe
        if not self._may("lock"):
            return []
        self.my_refund = attach_cosigs(self.my_refund, self._ordered_cosigs())
        receipt = self.ledgers[give].submit(self.my_spend)
        self.trace.append((self.name, "publish", give, f"{receipt.status.value}@{self.ledgers[give].period}"))
        if not receipt.sealed:
            self.phase = Phase.REFUSED
        else:
            self.phase = Phase.AWAIT_PARTNER_LOCK if self.role is Role.A else Phase.LOCKED
        return []

    def _ordered_cosigs(self) -> list[tuple[bytes, bytes]]:
        sigs = dict(self.my_cosigs)
        cond = self.my_refund.inputs[0].witness.condition
        return [(pk, sigs[pk]) for pk in cond.refund_pks if pk in sigs]

    def _countersign(self, req: RefundSigRequest) -> list[bytes]:
        if not self._check_partner_lock(req):
            self.phase = Phase.REFUSED
            return []
        if not self._may("countersign"):
            return []
        self.partner_spend = req.spend
        if self.role is Role.B:
            self.h = req.spend.outputs[0].addr.hashes[0]
        key = self.keys[self._get]
        return self._send(self._partner, RefundSig(key.pk, sign_refund(req.refund, key)))

    # -- C -----------------------------------------------------------------------

    def _approver(self, sender: Role, body) -> list[bytes]:
        if not isinstance(body, RefundSigRequest):
            return []
        t = body.terms
        pair = (t.offered, t.wanted)
        if pair not in self.approved:
            self.trace.append((self.name, "refuse", sender.value, f"{t.offered}->{t.wanted}"))
            return []
        if sender not in (Role.A, Role.B):
            return []
        cur = t.offered if sender is Role.A else t.wanted
        refund = body.refund
        signed = dict(body.cosigs)
        spk = self._pk(sender, cur)
        if spk not in signed or not verify_refund_sig(refund, spk, signed[spk]):
            return []
        move = "approve-a" if sender is Role.A else "approve-b"
        if self.moves != MOVES[Role.C].index(move) or not self._may(move):
            return []
        key = self.keys[cur]
        return self._send(sender, RefundSig(key.pk, sign_refund(refund, key)))

    # -- ledger-driven steps ---------------------------------------------------------

    def tick(self) -> list[bytes]:
        """React to ledger state: lock after the partner, claim, or refund."""
        if self.role is Role.C:
            return []
        out = self._b_tick() if self.role is Role.B else self._a_tick()
        self._maybe_refund()
        return out

    def _a_tick(self) -> list[bytes]:
        if self.phase is not Phase.AWAIT_PARTNER_LOCK or self.partner_spend is None:
            return []
        ledger = self.ledgers[self._get]
        lock = self.partner_spend.output_ids()[0]
        if ledger.find(self.partner_spend.hash) is None or ledger.spender_of(lock) is not None:
            return []
        if ledger.period > self.terms.t2 or ledger.period < self.claim_not_before:
            return []
        if not self._may("claim"):
            return []
        cond = self.partner_spend.outputs[0].addr
        key = self.keys[self._get]
        claim = build_claim_tx(lock, cond, (self.secret, encode_currency(self._give)), key, key.pk)
        r = ledger.submit(claim)
        self.trace.append((self.name, "claim", self._get, f"{r.status.value}@{ledger.period}"))
        if r.sealed:
            self.phase = Phase.CLAIMED
        return []

    def _b_tick(self) -> list[bytes]:
        out: list[bytes] = []
        a_ledger = self.ledgers[self._get]
        if (
            self.partner_spend is not None
            and self.my_spend is None
            and self.ledgers[self._give].period <= self.terms.t2
            and a_ledger.find(self.partner_spend.hash) is not None
            and self._may("ask-approver")
        ):
            req = self._make_lock()
            self.phase = Phase.AWAIT_APPROVAL
            out += self._send(Role.C, req)
        # claim A's lock once the secret shows up on B's own ledger
        if self.partner_spend is not None and self.my_spend is not None and self.phase is not Phase.CLAIMED:
            mine = self.ledgers[self._give]
            spender = mine.spender_of(self.my_spend.output_ids()[0])
            lock = self.partner_spend.output_ids()[0]
            if (
                spender is not None
                and spender.inputs[0].witness is not None
                and spender.inputs[0].witness.preimages
                and a_ledger.spender_of(lock) is None
                and self.terms.t1 >= a_ledger.period >= self.claim_not_before
            ):
                x = spender.inputs[0].witness.preimages[0]
                if H(x) == self.h:
                    cond = self.partner_spend.outputs[0].addr
                    key = self.keys[self._get]
                    claim = build_claim_tx(lock, cond, (x, encode_currency(self._give)), key, key.pk)
                    r = a_ledger.submit(claim)
                    self.trace.append((self.name, "claim", self._get, f"{r.status.value}@{a_ledger.period}"))
                    if r.sealed:
                        self.phase = Phase.CLAIMED
        return out

    def _maybe_refund(self) -> None:
        if self.my_spend is None or self.phase is Phase.REFUNDED:
            return
        ledger = self.ledgers[self._give]
        lock = self.my_spend.output_ids()[0]
        if ledger.find(self.my_spend.hash) is None or ledger.spender_of(lock) is not None:
            return
        cond = self.my_spend.outputs[0].addr
        if ledger.period <= cond.timeout:
            return
        refund = attach_cosigs(self.my_refund, self._ordered_cosigs())
        if len(refund.inputs[0].witness.cosigs) != 3:
            return
        r = ledger.submit(refund)
        self.trace.append((self.name, "refund", self._give, f"{r.status.value}@{ledger.period}"))
        if r.sealed and self.phase is not Phase.CLAIMED:
            self.phase = Phase.REFUNDED


def step_session(session: ExchangeSession, event) -> tuple[ExchangeSession, list[bytes]]:
    """Advance one party: ``"start"``, ``"tick"`` or an encoded message."""
    if event == "start":
        return session, session.start()
    if event == "tick":
        return session, session.tick()
    return session, session.handle(event)


# -- driving a whole exchange -------------------------------------------------------


class OutcomeKind(str, enum.Enum):
    EXCHANGED = "exchanged"
    REFUNDED = "refunded"
    UNFAIR = "unfair"


@dataclass
class ExchangeOutcome:
    kind: OutcomeKind
    # (role, currency) -> change in that party's balance
    deltas: dict
    abort: Optional[tuple[Role, int]]
    trace: list
    ledgers: dict[str, Ledger] = field(repr=False, default=None)


def party_keys(seed: bytes, currencies) -> dict[Role, dict[str, KeyPair]]:
    return {
        r: {c: crypto.keygen(seed + b"/" + r.value.encode() + b"/" + encode_currency(c), "test") for c in currencies}
        for r in Role
    }


def run_exchange(
    terms: ExchangeTerms,
    *,
    approved=None,
    abort: Optional[tuple[Role, int]] = None,
    a_claim_period: int = 0,
    b_claim_period: int = 0,
    seed: bytes = b"fx",
) -> ExchangeOutcome:
    """Run one exchange over two fresh ledgers until every timeout has passed.

    ``abort=(role, k)`` makes that party walk away after ``k`` protocol
    moves; it still refunds and claims whenever that only protects itself.
    The claim periods delay each side's claim to probe timing windows.
    """
    terms.validate()
    c1, c2 = terms.offered, terms.wanted
    keys = party_keys(seed, (c1, c2))
    directory = {r: {c: kp.pk for c, kp in ks.items()} for r, ks in keys.items()}
    ledgers = {
        c1: Ledger.create(c1, [(directory[Role.A][c1], terms.m), (directory[Role.A][c1], 7)]),
        c2: Ledger.create(c2, [(directory[Role.B][c2], terms.n), (directory[Role.B][c2], 5)]),
    }
    approved = frozenset([(c1, c2)] if approved is None else approved)
    # one shared trace keeps the global order of events
    trace: list = []
    before = {(r, c): ledgers[c].balance(directory[r][c]) for r in Role for c in (c1, c2)}
    sessions = {
        r: ExchangeSession(
            r,
            terms,
            ledgers,
            keys[r],
            directory,
            approved=approved if r is Role.C else frozenset(),
            abort_after=abort[1] if abort and abort[0] is r else None,
            claim_not_before={Role.A: a_claim_period, Role.B: b_claim_period}.get(r, 0),
            secret=H(seed + b"/secret") if r is Role.A else None,
            trace=trace,
        )
        for r in Role
    }
    queue = deque(sessions[Role.A].start())
    while True:
        while True:
            moved = len(trace)
            while queue:
                raw = queue.popleft()
                to = Role(decode(raw).recipient)
                queue.extend(sessions[to].handle(raw))
            for r in Role:
                queue.extend(sessions[r].tick())
            if not queue and len(trace) == moved:
                break
        if ledgers[c1].period > terms.t1 and ledgers[c2].period > terms.t1:
            break
        for led in ledgers.values():
            led.advance()
    for led in ledgers.values():
        led.advance()
    deltas = {(r, c): ledgers[c].balance(directory[r][c]) - before[r, c] for r in Role for c in (c1, c2)}
    return ExchangeOutcome(classify(terms, deltas), deltas, abort, trace, ledgers)


def classify(terms: ExchangeTerms, deltas: dict) -> OutcomeKind:
    c1, c2 = terms.offered, terms.wanted
    swapped = {
        (Role.A, c1): -terms.m,
        (Role.A, c2): terms.n,
        (Role.B, c1): terms.m,
        (Role.B, c2): -terms.n,
    }
    if all(v == 0 for v in deltas.values()):
        return OutcomeKind.REFUNDED
    if all(deltas[k] == swapped.get(k, 0) for k in deltas):
        return OutcomeKind.EXCHANGED
    return OutcomeKind.UNFAIR


def abort_points():
    """Every single-party abort: (role, moves made before walking away)."""
    yield None
    for role in Role:
        for k in range(len(MOVES[role])):
            yield (role, k)


def enumerate_outcomes(terms: ExchangeTerms, **kwargs) -> list[ExchangeOutcome]:
    """All abort points crossed with early and last-moment claims."""
    out = []
    for abort in abort_points():
        for a_at, b_at in ((0, 0), (terms.t2, 0), (0, terms.t1), (terms.t2, terms.t1)):
            out.append(run_exchange(terms, abort=abort, a_claim_period=a_at, b_claim_period=b_at, **kwargs))
    return out


@dataclass(frozen=True)
class ExchangeLink:
    h: Hash
    offered_lock: Hash
    wanted_lock: Hash
    approver: tuple[bytes, bytes]
    # the secret appeared on-chain, so both claims were possible
    secret: Optional[bytes]


def _locks(ledger: Ledger, other: str):
    tag = currency_tag(other)
    for tx in ledger.all_transactions():
        for out in tx.outputs:
            cond = out.addr
            if isinstance(cond, SpendCondition) and len(cond.hashes) == 2 and cond.hashes[1] == tag:
                yield tx, cond


def link_exchanges(first: Ledger, second: Ledger) -> list[ExchangeLink]:
    """Pair hash-locked outputs across two ledgers that share a secret hash.

    Each lock commits to the other currency and names the approver's key
    as a refund cosigner, so an auditor can tie both halves to one
    exchange and to the approver who signed off on it.
    """
    theirs = {}
    for tx, cond in _locks(second, first.currency):
        theirs.setdefault(cond.hashes[0], (tx, cond))
    links = []
    for tx, cond in _locks(first, second.currency):
        other = theirs.get(cond.hashes[0])
        if other is None:
            continue
        secret = None
        for led, lock_tx in ((second, other[0]), (first, tx)):
            spender = led.spender_of(lock_tx.output_ids()[0])
            w = spender.inputs[0].witness if spender is not None else None
            if w is not None and w.preimages and H(w.preimages[0]) == cond.hashes[0]:
                secret = w.preimages[0]
        links.append(
            ExchangeLink(cond.hashes[0], tx.hash, other[0].hash, (cond.refund_pks[2], other[1].refund_pks[2]), secret)
        )
    return links
