import pytest
from hypothesis import HealthCheck, settings

from mintchain import crypto
from mintchain.client import Wallet
from mintchain.net.local import LocalNetwork

settings.register_profile(
    "repo", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")


def _wallets(n, tag):
    return [Wallet(crypto.keygen(tag + b"/w%d" % i, "test")) for i in range(n)]


@pytest.fixture
def make_network():
    """Factory: (network, wallets) with every wallet holding ``coins`` coins of ``value``."""

    def build(m=3, q=3, *, users=3, coins=3, value=100, seed=b"net", **options):
        ws = _wallets(users, seed)
        allocations = [(w.address, value) for w in ws for _ in range(coins)]
        net = LocalNetwork.create(m, q, allocations=allocations, seed=seed, **options)
        for w in ws:
            for tx in net.bank.chain[0].txset:
                w.receive(tx)
        return net, ws

    return build


def settle(tx, receipt, wallets, payer):
    if receipt.sealed:
        payer.spend(tx)
        for w in wallets:
            w.receive(tx)


@pytest.fixture
def pay():
    """Submit a payment and update every wallet if it seals."""

    def run(net, wallets, src, dst, amount, **kwargs):
        payer = wallets[src]
        tx = payer.pay(wallets[dst].address, amount, **kwargs)
        r = net.submit(tx)
        settle(tx, r, wallets, payer)
        return r

    return run
