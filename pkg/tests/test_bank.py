from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from mintchain import crypto
from mintchain.bank import (
    PeriodArchive,
    compute_fees,
    prune_chains,
    verify_higher_block,
)
from mintchain.core import Output, Transaction, TxKind, make_tx
from mintchain.mintette import BANK_GENESIS_HASH
from mintchain.net.behaviours import AcceptDoubleSpendMintette

BANK = crypto.keygen(b"bank", "test")
OWNERS = [crypto.keygen(b"owner%d" % i, "test") for i in range(3)]


def test_genesis_and_period_blocks_verify(make_network, pay):
    net, ws = make_network()
    genesis = net.bank.chain[0]
    assert verify_higher_block(genesis, BANK_GENESIS_HASH, net.bank.pk)
    prev = net.bank.head
    for i in range(3):
        assert pay(net, ws, i, (i + 1) % 3, 40).sealed
    archive = net.end_period()
    block = archive.block
    assert verify_higher_block(block, prev, net.bank.pk)
    assert not verify_higher_block(block, prev, crypto.keygen(b"x", "test").pk)
    assert {r.tx.hash for r in net.receipts} <= {tx.hash for tx in block.txset}
    assert net.bank.period == 2 and block.next_shard_map.period == 2


def test_balances_follow_sealed_payments(make_network, pay):
    net, ws = make_network()
    pay(net, ws, 0, 1, 40)
    pay(net, ws, 1, 2, 140)
    net.end_period()
    bal = net.bank.utxo.balances()
    assert [bal.get(w.address, 0) for w in ws] == [260, 200, 440]


def test_fee_payout_matches_vote_count(make_network, pay):
    net, ws = make_network(6, 3, fee_per_certification=2)
    for k in range(6):
        pay(net, ws, k % 3, (k + 1) % 3, 10)
    archive = net.end_period()
    # oracle: each sealed input earns every owner whose vote rode in the bundle
    expected = Counter()
    for r in net.receipts:
        for e in r.bundle.entries:
            expected[e.mintette_id] += 2
    payout = [tx for tx in archive.block.txset if tx.kind == TxKind.FEE_PAYOUT]
    assert len(payout) == 1
    paid = {o.addr: o.value for o in payout[0].outputs if o.addr != net.bank.pk}
    smap = archive.logs.shard_map
    assert paid == {smap.pk(m): v for m, v in expected.items()}


def test_fee_tally_is_pure_function_of_logs(make_network, pay):
    net, ws = make_network()
    pay(net, ws, 0, 1, 10)
    archive = net.end_period()
    logs = archive.logs.log_map()
    assert compute_fees(logs).credits == compute_fees(dict(reversed(list(logs.items())))).credits


def _double_spend(net, ws):
    coin = sorted(ws[0].coins)[0]
    a = net.submit(ws[0].pay(ws[1].address, 10, inputs=[coin]))
    b = net.submit(ws[0].pay(ws[2].address, 10, inputs=[coin], memo=b"rival"))
    return a, b


def test_colluding_shard_caught_by_vigilant_merge(make_network):
    colluders = {i: AcceptDoubleSpendMintette for i in range(3)}
    net, ws = make_network(mintette_cls=colluders, vigilant=True)
    a, b = _double_spend(net, ws)
    assert a.sealed and b.sealed
    archive = net.end_period()
    hashes = {tx.hash for tx in archive.block.txset}
    assert a.tx.hash not in hashes and b.tx.hash not in hashes
    (conflict,) = archive.logs.conflicts
    assert set(conflict.implicated) == {"m0", "m1", "m2"}


def test_colluding_shard_passes_optimistic_merge(make_network):
    colluders = {i: AcceptDoubleSpendMintette for i in range(3)}
    net, ws = make_network(mintette_cls=colluders)
    a, b = _double_spend(net, ws)
    archive = net.end_period()
    assert {a.tx.hash, b.tx.hash} <= {tx.hash for tx in archive.logs.merged_txset}


def test_archive_round_trip(tmp_path, make_network, pay):
    net, ws = make_network()
    pay(net, ws, 0, 1, 10)
    archive = net.end_period()
    bp, lp = archive.write(tmp_path)
    again = PeriodArchive.read(bp, lp)
    assert again == archive and bp.read_bytes() == (tmp_path / bp.name).read_bytes()


def test_utxo_slices_partition_the_ledger(make_network):
    net, _ = make_network(9, 3)
    slices = [net.bank.utxo_slice(f"m{i}") for i in range(9)]
    for shard in net.shard_map.shards:
        assert len({frozenset(slices[int(m[1:])]) for m in shard}) == 1
    union = set().union(*slices)
    assert union == set(net.bank.utxo.outputs)


# -- pruning -------------------------------------------------------------------------


@st.composite
def tx_dags(draw):
    base = Transaction(
        TxKind.COIN_GENERATION, (), tuple(Output(OWNERS[i % 3].pk, 100) for i in range(6)), b"base"
    )
    keys = {o.pk: o for o in OWNERS}
    unspent = list(zip(base.output_ids(), base.outputs))
    txs = []
    for i in range(draw(st.integers(1, 50))):
        if not unspent:
            break
        k = draw(st.integers(1, min(3, len(unspent))))
        picks = sorted(set(draw(st.lists(st.integers(0, len(unspent) - 1), min_size=k, max_size=k))), reverse=True)
        spent = [unspent.pop(j) for j in picks]
        total = sum(a.value for a, _ in spent)
        n_out = draw(st.integers(1, 3))
        cuts = sorted(draw(st.lists(st.integers(0, total), min_size=n_out - 1, max_size=n_out - 1)))
        values = [b - a for a, b in zip([0] + cuts, cuts + [total])]
        outs = [(OWNERS[draw(st.integers(0, 2))].pk, v) for v in values]
        tx = make_tx([(a, keys[o.addr]) for a, o in spent], outs, memo=b"%d" % i)
        txs.append(tx)
        unspent += list(zip(tx.output_ids(), tx.outputs))
    return base, txs


def net_balances(base, txs):
    # independent of UtxoSet: produced minus consumed
    produced = dict(zip(base.output_ids(), base.outputs))
    for tx in txs:
        produced.update(zip(tx.output_ids(), tx.outputs))
    consumed = {a for tx in txs for a in tx.addr_ids}
    bal = Counter()
    for a, o in produced.items():
        if a not in consumed and o.value:
            bal[o.addr] += o.value
    return bal


@settings(max_examples=200)
@given(tx_dags())
def test_pruning_preserves_balances_and_removes_intermediates(dag):
    base, txs = dag
    pruned, mapping = prune_chains(txs, BANK)
    assert net_balances(base, pruned) == net_balances(base, txs)
    produced = {a for tx in pruned for a in tx.output_ids()}
    assert not any(a in produced for tx in pruned for a in tx.addr_ids)
    kept = {tx.hash for tx in pruned}
    for tx in txs:
        assert tx.hash in kept or mapping[tx.hash] in kept


def test_pruning_leaves_observed_chains():
    base = Transaction(TxKind.COIN_GENERATION, (), (Output(OWNERS[0].pk, 10),), b"b")
    t1 = make_tx([(base.output_ids()[0], OWNERS[0])], [(OWNERS[1].pk, 10)])
    t2 = make_tx([(t1.output_ids()[0], OWNERS[1])], [(OWNERS[2].pk, 10)])
    pruned, mapping = prune_chains([t1, t2], BANK)
    assert len(pruned) == 1 and pruned[0].kind == TxKind.PRUNED and set(mapping) == {t1.hash, t2.hash}
    kept, none = prune_chains([t1, t2], BANK, observed=frozenset({t2.hash}))
    assert set(kept) == {t1, t2} and not none


def test_padded_txset_rejected(make_network, pay):
    import dataclasses

    net, ws = make_network()
    prev = net.bank.head
    pay(net, ws, 0, 1, 10)
    block = net.end_period().block
    padded = dataclasses.replace(block, txset=block.txset + block.txset[:1])
    assert verify_higher_block(padded, prev, net.bank.pk).reason == "NonCanonicalTxset"
