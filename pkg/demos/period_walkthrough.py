"""One period end to end: payments, a refused double-spend, the higher block and its audit."""

from mintchain import crypto
from mintchain.audit import audit_period
from mintchain.client import Wallet
from mintchain.net.local import LocalNetwork


def main():
    alice, bob, carol = (Wallet(crypto.keygen(n, "test")) for n in (b"alice", b"bob", b"carol"))
    net = LocalNetwork.create(6, 3, allocations=[(alice.address, 100), (alice.address, 40), (bob.address, 70)])
    for w in (alice, bob, carol):
        for tx in net.bank.chain[0].txset:
            w.receive(tx)
    print(f"period {net.period}: {len(net.shard_map.shards)} shards of {net.shard_map.shard_size}")

    def pay(src, dst, amount, **kw):
        tx = src.pay(dst.address, amount, **kw)
        r = net.submit(tx)
        if r.sealed:
            src.spend(tx)
            for w in (alice, bob, carol):
                w.receive(tx)
        print(f"  {amount:>4} -> {r.status.value:<8} {r.messages} messages")
        return r

    pay(alice, bob, 120)
    pay(bob, carol, 30)

    # spend the same coin twice; the owners already voted for the first tx
    coin = sorted(carol.coins)[0]
    net.submit(carol.pay(alice.address, 10, inputs=[coin]))
    rival = net.submit(carol.pay(bob.address, 10, inputs=[coin], memo=b"again"))
    print(f"  double-spend: {rival.status.value} ({rival.reason.value if rival.reason else ''})")

    archive = net.end_period()
    print(f"sealed period {archive.period}: {len(archive.block.txset)} txs, h={archive.block.h.hex()[:16]}")
    for name, w in (("alice", alice), ("bob", bob), ("carol", carol)):
        print(f"  {name:<6} {net.balances().get(w.address, 0)}")
    for report in audit_period(archive, net.bank.pk, net.receipts):
        print(f"  audit {report.property.value:<22} {report.verdict}")


if __name__ == "__main__":
    main()
