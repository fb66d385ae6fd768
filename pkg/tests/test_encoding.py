import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mintchain.core import AddrId, Input, Output, SpendCondition, Transaction, TxKind, Witness
from mintchain.encoding import EncodingError, decode, decode_many, encode, encode_many
from mintchain.messages import Envelope, QueryReq


def test_addrid_golden_bytes():
    a = AddrId(b"\xab" * 32, 2, 500)
    assert encode(a) == bytes([0x01]) + b"\xab" * 32 + (2).to_bytes(8, "big") + (500).to_bytes(8, "big")


def test_output_golden_bytes():
    # tag, plain-key flag, length-prefixed key, u64 value
    assert encode(Output(b"\x01\x02", 7)).hex() == "02" + "00" + "00000002" + "0102" + "0000000000000007"


def test_empty_transaction_golden_bytes():
    tx = Transaction(TxKind.COIN_GENERATION, (), (), b"")
    assert encode(tx) == bytes([0x06, 1]) + struct.pack(">III", 0, 0, 0)


def test_trailing_and_truncated_input_rejected():
    raw = encode(AddrId(b"\x00" * 32, 0, 1))
    with pytest.raises(EncodingError):
        decode(raw + b"\x00")
    with pytest.raises(EncodingError):
        decode(raw[:-1])
    with pytest.raises(EncodingError):
        decode(b"\xff")


def test_out_of_range_integers_rejected():
    with pytest.raises(EncodingError):
        encode(AddrId(b"\x00" * 32, -1, 1))
    with pytest.raises(EncodingError):
        encode(AddrId(b"\x00" * 32, 0, 2**64))


hashes = st.binary(min_size=32, max_size=32)
u64 = st.integers(0, 2**64 - 1)
addr_ids = st.builds(AddrId, hashes, st.integers(0, 1000), u64)
conditions = st.builds(
    SpendCondition,
    st.lists(hashes, max_size=3).map(tuple),
    st.binary(max_size=33),
    st.lists(st.binary(max_size=33), max_size=3).map(tuple),
    u64,
)
addresses = st.one_of(st.binary(max_size=40), conditions)
outputs = st.builds(Output, addresses, u64)
witnesses = st.builds(
    Witness,
    conditions,
    st.lists(st.binary(max_size=40), max_size=3).map(tuple),
    st.lists(st.tuples(st.binary(max_size=33), st.binary(max_size=64)), max_size=3).map(tuple),
)
inputs = st.builds(Input, addr_ids, st.binary(max_size=64), st.binary(max_size=33), st.none() | witnesses)
transactions = st.builds(
    Transaction,
    st.sampled_from(list(TxKind)),
    st.lists(inputs, max_size=4).map(tuple),
    st.lists(outputs, max_size=4).map(tuple),
    st.binary(max_size=16),
)


@given(transactions)
def test_transaction_round_trip(tx):
    raw = encode(tx)
    assert decode(raw) == tx
    assert encode(decode(raw)) == raw


@given(st.lists(transactions, max_size=5))
def test_many_round_trip(txs):
    assert list(decode_many(encode_many(txs))) == txs


@given(st.integers(0, 2**64 - 1), transactions, addr_ids)
def test_envelope_round_trip(rid, tx, a):
    env = Envelope(rid, QueryReq(tx, a))
    assert decode(encode(env)) == env


@given(st.binary(max_size=64))
def test_garbage_never_crashes_decoder(raw):
    try:
        decode(raw)
    except EncodingError:
        pass
