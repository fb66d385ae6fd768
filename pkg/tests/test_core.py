import pytest
from hypothesis import given
from hypothesis import strategies as st

from mintchain import crypto
from mintchain.core import (
    AddrId,
    Input,
    Output,
    Reason,
    SpendCondition,
    Transaction,
    TxKind,
    UtxoSet,
    Witness,
    authorization_message,
    check_tx,
    make_tx,
    sorted_txs,
    topological_order,
)

ALICE = crypto.keygen(b"alice", "test")
BOB = crypto.keygen(b"bob", "test")


def gen(pk, value, memo=b"g"):
    return Transaction(TxKind.COIN_GENERATION, (), (Output(pk, value),), memo)


@pytest.mark.parametrize("scheme", ["ed25519", "test"])
def test_signatures(scheme):
    kp = crypto.keygen(b"seed", scheme)
    sig = kp.sign(b"msg")
    assert crypto.verify(kp.pk, b"msg", sig)
    assert not crypto.verify(kp.pk, b"msh", sig)
    assert not crypto.verify(crypto.keygen(b"other", scheme).pk, b"msg", sig)
    assert crypto.keygen(b"seed", scheme) == kp
    assert kp.scheme == scheme


def test_hash_is_sha256_of_concatenation():
    import hashlib

    assert crypto.H(b"ab", b"c") == hashlib.sha256(b"abc").digest()


def test_check_tx_accepts_signed_spend():
    g = gen(ALICE.pk, 10)
    utxo = dict(zip(g.output_ids(), g.outputs))
    tx = make_tx([(g.output_ids()[0], ALICE)], [(BOB.pk, 7), (ALICE.pk, 3)])
    assert check_tx(tx, utxo.get)
    assert tx.fee() == 0


@pytest.mark.parametrize(
    "mutate, reason",
    [
        (lambda g: make_tx([(g.output_ids()[0], BOB)], [(BOB.pk, 10)]), Reason.BAD_SIGNATURE),
        (lambda g: make_tx([(g.output_ids()[0], ALICE)], [(BOB.pk, 11)]), Reason.OVERSPEND),
        (lambda g: make_tx([(AddrId(g.hash, 5, 10), ALICE)], [(BOB.pk, 1)]), Reason.UNKNOWN_INPUT),
        (lambda g: make_tx([(g.output_ids()[0], ALICE)] * 2, [(BOB.pk, 1)]), Reason.MALFORMED),
        (lambda g: Transaction(TxKind.NORMAL, (), (Output(BOB.pk, 1),)), Reason.MALFORMED),
    ],
)
def test_check_tx_rejections(mutate, reason):
    g = gen(ALICE.pk, 10)
    utxo = dict(zip(g.output_ids(), g.outputs))
    res = check_tx(mutate(g), utxo.get)
    assert not res and res.reason is reason


def test_value_mismatch_with_positional_resolver():
    g = gen(ALICE.pk, 10)
    by_pos = {(a.tx_hash, a.index): o for a, o in zip(g.output_ids(), g.outputs)}
    tx = make_tx([(AddrId(g.hash, 0, 9), ALICE)], [(BOB.pk, 1)])
    res = check_tx(tx, lambda a: by_pos.get((a.tx_hash, a.index)))
    assert res.reason is Reason.VALUE_MISMATCH


def test_signature_covers_outputs():
    g = gen(ALICE.pk, 10)
    utxo = dict(zip(g.output_ids(), g.outputs))
    tx = make_tx([(g.output_ids()[0], ALICE)], [(BOB.pk, 10)])
    forged = Transaction(tx.kind, tx.inputs, (Output(crypto.keygen(b"mallory", "test").pk, 10),))
    assert not check_tx(forged, utxo.get)


def _locked(timeout=3):
    secret = b"x" * 32
    cond = SpendCondition((crypto.H(secret),), BOB.pk, (ALICE.pk, BOB.pk), timeout)
    g = Transaction(TxKind.COIN_GENERATION, (), (Output(cond, 5),), b"lock")
    return secret, cond, g


def _claim(cond, g, preimages, key):
    a = g.output_ids()[0]
    unsigned = Transaction(TxKind.NORMAL, (Input(a, witness=Witness(cond, preimages)),), (Output(key.pk, 5),))
    sig = key.sign(authorization_message(unsigned, a))
    return Transaction(TxKind.NORMAL, (Input(a, sig, key.pk, Witness(cond, preimages)),), unsigned.outputs)


def _refund(cond, g, signers):
    a = g.output_ids()[0]
    unsigned = Transaction(TxKind.NORMAL, (Input(a, witness=Witness(cond)),), (Output(ALICE.pk, 5),))
    msg = authorization_message(unsigned, a)
    cosigs = tuple((k.pk, k.sign(msg)) for k in signers)
    return Transaction(TxKind.NORMAL, (Input(a, witness=Witness(cond, (), cosigs)),), unsigned.outputs)


def test_hash_lock_branch_window():
    secret, cond, g = _locked()
    utxo = dict(zip(g.output_ids(), g.outputs))
    claim = _claim(cond, g, (secret,), BOB)
    assert check_tx(claim, utxo.get, period=3)
    assert not check_tx(claim, utxo.get, period=4)
    assert not check_tx(_claim(cond, g, (b"y" * 32,), BOB), utxo.get, period=1)
    assert not check_tx(_claim(cond, g, (secret,), ALICE), utxo.get, period=1)


def test_refund_branch_needs_every_signature_after_timeout():
    _, cond, g = _locked()
    utxo = dict(zip(g.output_ids(), g.outputs))
    assert check_tx(_refund(cond, g, [ALICE, BOB]), utxo.get, period=4)
    assert not check_tx(_refund(cond, g, [ALICE, BOB]), utxo.get, period=3)
    assert not check_tx(_refund(cond, g, [ALICE]), utxo.get, period=4)
    assert not check_tx(_refund(cond, g, [ALICE, BOB]), utxo.get, period=None)


def chain(n):
    g = gen(ALICE.pk, 100)
    txs, a = [g], g.output_ids()[0]
    for i in range(n):
        tx = make_tx([(a, ALICE)], [(ALICE.pk, a.value)], memo=b"%d" % i)
        txs.append(tx)
        a = tx.output_ids()[0]
    return txs


@given(st.randoms(use_true_random=False), st.integers(1, 12))
def test_topological_order_respects_spends(rnd, n):
    txs = chain(n)
    shuffled = list(txs)
    rnd.shuffle(shuffled)
    order = topological_order(shuffled)
    pos = {tx.hash: i for i, tx in enumerate(order)}
    for tx in txs:
        for a in tx.addr_ids:
            assert pos[a.tx_hash] < pos[tx.hash]
    assert order == topological_order(txs)


def test_sorted_txs_is_canonical_and_deduplicates():
    txs = chain(3)
    assert sorted_txs(txs + txs[::-1]) == sorted_txs(txs)
    assert [t.hash for t in sorted_txs(txs)] == sorted(t.hash for t in txs)


def test_utxo_replay_and_balances():
    txs = chain(4)
    u = UtxoSet()
    u.apply_all(txs[::-1])
    assert u.balances() == {ALICE.pk: 100}
    with pytest.raises(KeyError):
        u.apply(txs[1])
    assert u.copy().apply_all(txs[1:], strict=False) == list(topological_order(txs[1:]))
