import dataclasses

import pytest

from mintchain import crypto
from mintchain.core import Output, Transaction, TxKind, make_tx
from mintchain.encoding import decode, encode
from mintchain.mintette import (
    GENESIS_BLOCK_HASH,
    CloseEpochAction,
    CommitAction,
    EpochPolicy,
    EvidenceBundle,
    Mintette,
    QueryAction,
    Refusal,
    RefusalReason,
    Vote,
    chain_step,
    fold_heads,
    verify_lower_block,
    verify_lower_chain,
)
from mintchain.sharding import build_shard_map

BANK = crypto.keygen(b"bank", "test")
ALICE = crypto.keygen(b"alice", "test")
BOB = crypto.keygen(b"bob", "test")
BANK_PREV = b"\x11" * 32


@pytest.fixture
def shard():
    keys = [(f"m{i}", crypto.keygen(b"m%d" % i, "test")) for i in range(3)]
    smap = build_shard_map(1, [(m, k.pk) for m, k in keys], 3, BANK)
    gens = [Transaction(TxKind.COIN_GENERATION, (), (Output(ALICE.pk, 10),), b"%d" % i) for i in range(3)]
    utxo = {g.output_ids()[0]: g.outputs[0] for g in gens}
    nodes = [Mintette(m, k, epoch_policy=EpochPolicy(max_entries=1000)) for m, k in keys]
    for n in nodes:
        n.begin_period(smap, BANK_PREV, utxo)
    return nodes, smap, [g.output_ids()[0] for g in gens]


def pay(a, to=BOB, memo=b""):
    return make_tx([(a, ALICE)], [(to.pk, a.value)], memo=memo)


def votes_for(nodes, tx):
    return {(n.id, a): n.check_not_double_spent(tx, a) for n in nodes for a in tx.addr_ids}


def test_query_vote_binds_log_head(shard):
    nodes, _, coins = shard
    tx = pay(coins[0])
    vote = nodes[0].check_not_double_spent(tx, coins[0])
    assert isinstance(vote, Vote)
    assert vote.verify(tx.hash, coins[0])
    assert not vote.verify(tx.hash, coins[1])
    assert vote.head == nodes[0].head and vote.seq == len(nodes[0].log)
    assert isinstance(nodes[0].log[-1], QueryAction)


def test_repeat_query_is_idempotent_and_rival_refused(shard):
    nodes, _, coins = shard
    tx = pay(coins[0])
    rival = pay(coins[0], ALICE, memo=b"rival")
    assert isinstance(nodes[0].check_not_double_spent(tx, coins[0]), Vote)
    assert isinstance(nodes[0].check_not_double_spent(tx, coins[0]), Vote)
    r = nodes[0].check_not_double_spent(rival, coins[0])
    assert isinstance(r, Refusal) and r.reason == RefusalReason.DOUBLE_SPEND.value
    assert r.conflict == tx.hash
    assert nodes[0].double_spends and nodes[0].double_spends[0].second == rival


def test_invalid_tx_refused(shard):
    nodes, _, coins = shard
    forged = make_tx([(coins[0], BOB)], [(BOB.pk, 10)])
    r = nodes[0].check_not_double_spent(forged, coins[0])
    assert r.reason == RefusalReason.INVALID_TX.value
    assert nodes[0].log == []


def test_commit_requires_quorum(shard):
    nodes, smap, coins = shard
    tx = pay(coins[0])
    votes = votes_for(nodes, tx)
    one = EvidenceBundle.from_votes(dict(list(votes.items())[:1]))
    r = nodes[0].commit_tx(tx, 1, one)
    assert r.reason == RefusalReason.INSUFFICIENT_EVIDENCE.value
    two = EvidenceBundle.from_votes(dict(list(votes.items())[:smap.quorum]))
    conf = nodes[0].commit_tx(tx, 1, two)
    assert isinstance(conf, Vote) and conf.verify(tx.hash, None)
    assert isinstance(nodes[0].log[-1], CommitAction)
    assert tx.output_ids()[0] in nodes[0].utxo or nodes[0].id not in smap.owners(tx.output_ids()[0])


def test_commit_rejects_forged_and_stale_evidence(shard):
    nodes, _, coins = shard
    tx = pay(coins[0])
    votes = votes_for(nodes, tx)
    key = next(iter(votes))
    bad = dict(votes)
    bad[key] = dataclasses.replace(votes[key], sig=b"\x00" * 32)
    r = nodes[1].commit_tx(tx, 1, EvidenceBundle.from_votes(bad))
    assert r.reason == RefusalReason.BAD_VOTE_SIGNATURE.value
    assert nodes[1].commit_tx(tx, 2, EvidenceBundle.from_votes(votes)).reason == RefusalReason.WRONG_PERIOD.value


def test_log_heads_fold_the_chain(shard):
    nodes, _, coins = shard
    m = nodes[0]
    for c in coins:
        tx = pay(c)
        m.check_not_double_spent(tx, c)
    m.close_epoch()
    heads = fold_heads(m.log)
    assert len(heads) == len(m.log) + 1 and heads[-1] == m.head
    for entry, before, after in zip(m.log, heads, heads[1:]):
        assert chain_step(entry, before) == after
    assert isinstance(m.log[-1], CloseEpochAction)


def test_lower_blocks_chain_and_verify(shard):
    nodes, smap, coins = shard
    for c in coins[:2]:
        tx = pay(c)
        votes = votes_for(nodes, tx)
        bundle = EvidenceBundle.from_votes(votes)
        for n in nodes:
            n.commit_tx(tx, 1, bundle)
        nodes[0].seal_epoch()
    blocks, log = nodes[0].end_period()
    assert len(blocks) >= 2
    assert verify_lower_chain(blocks, BANK_PREV, smap, BANK.pk)
    for b in blocks:
        assert decode(encode(b)) == b
    assert not verify_lower_chain(blocks[::-1], BANK_PREV, smap, BANK.pk)
    assert not verify_lower_block(blocks[0], b"\x22" * 32, GENESIS_BLOCK_HASH, smap, BANK.pk)
    other = build_shard_map(1, [(f"m{i}", crypto.keygen(b"x%d" % i, "test").pk) for i in range(3)], 3, BANK)
    assert verify_lower_block(blocks[0], BANK_PREV, GENESIS_BLOCK_HASH, other, BANK.pk).reason == "Unauthorized"


def test_epoch_policy_seals_automatically():
    keys = [(f"m{i}", crypto.keygen(b"m%d" % i, "test")) for i in range(3)]
    smap = build_shard_map(1, [(m, k.pk) for m, k in keys], 3, BANK)
    gens = [Transaction(TxKind.COIN_GENERATION, (), (Output(ALICE.pk, 10),), b"%d" % i) for i in range(6)]
    utxo = {g.output_ids()[0]: g.outputs[0] for g in gens}
    m = Mintette("m0", keys[0][1], epoch_policy=EpochPolicy(max_entries=2))
    m.begin_period(smap, BANK_PREV, utxo)
    for g in gens:
        a = g.output_ids()[0]
        m.check_not_double_spent(pay(a), a)
    assert len(m.lower_blocks) >= 2


def test_write_ahead_log(tmp_path, shard):
    _, smap, coins = shard
    m = Mintette("m0", crypto.keygen(b"m0", "test"), wal_path=tmp_path / "m0.wal")
    m.begin_period(smap, BANK_PREV, {c: Output(ALICE.pk, 10) for c in coins})
    m.check_not_double_spent(pay(coins[0]), coins[0])
    assert (tmp_path / "m0.wal").stat().st_size > 0
