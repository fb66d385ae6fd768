import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mintchain import crypto
from mintchain.core import AddrId
from mintchain.sharding import build_shard_map, monte_carlo_security, shard_security_probability

BANK = crypto.keygen(b"bank", "test")


def binomial_oracle(alpha, q, y):
    # independent route: explicit binomial PMF summation
    k = (q - 1) // 2
    rho = sum(math.comb(q, i) * alpha**i * (1 - alpha) ** (q - i) for i in range(k + 1))
    return rho**y


GRID = [(a / 100, q, y) for a in range(0, 51, 5) for q in (3, 5, 7) for y in (1, 10, 100)]


@pytest.mark.parametrize("alpha, q, y", GRID)
def test_closed_form_matches_binomial_sum(alpha, q, y):
    assert abs(shard_security_probability(alpha, q, y) - binomial_oracle(alpha, q, y)) <= 1e-9


@pytest.mark.parametrize(
    "alpha, q, y, expected",
    [
        # frozen from exact rational arithmetic
        (0.10, 3, 10, 0.7527706003419721),
        (0.25, 5, 100, 1.7958599124240308e-05),
        (0.50, 7, 1, 0.5),
        (0.05, 7, 10, 0.9980659041419038),
    ],
)
def test_frozen_values(alpha, q, y, expected):
    assert shard_security_probability(alpha, q, y) == pytest.approx(expected, rel=1e-12)


def test_single_shard_honest_probability():
    # three members, at most one corrupt: 0.9^3 + 3 * 0.1 * 0.9^2
    assert shard_security_probability(0.1, 3, 1) == pytest.approx(0.972, abs=1e-12)


def test_monte_carlo_agrees_within_three_standard_errors():
    p, se = monte_carlo_security(0.1, 3, 10, trials=100_000, rng=np.random.default_rng(7))
    assert abs(p - shard_security_probability(0.1, 3, 10)) <= 3 * se


def test_fixed_fraction_sampling_differs_from_independent_model():
    p, se = monte_carlo_security(0.1, 3, 10, trials=50_000, rng=np.random.default_rng(1), fixed_fraction=True)
    assert abs(p - 0.7528) > 3 * se


@given(st.floats(0, 0.5), st.sampled_from([1, 3, 5, 7, 9]), st.integers(1, 50))
def test_more_shards_never_safer(alpha, q, y):
    assert shard_security_probability(alpha, q, y + 1) <= shard_security_probability(alpha, q, y) + 1e-15


@given(st.floats(0, 0.49), st.integers(1, 20))
def test_bigger_shards_safer_below_half(alpha, y):
    assert shard_security_probability(alpha, 7, y) >= shard_security_probability(alpha, 3, y) - 1e-12


@pytest.mark.parametrize("args", [(-0.1, 3, 1), (1.1, 3, 1), (0.1, 4, 1), (0.1, 3, 0)])
def test_parameter_validation(args):
    with pytest.raises(ValueError):
        shard_security_probability(*args)


def _map(m, q, period=1):
    keys = [(f"m{i}", crypto.keygen(b"m%d" % i, "test").pk) for i in range(m)]
    return build_shard_map(period, keys, q, BANK)


@given(st.integers(3, 14), st.sampled_from([1, 3]), st.binary(min_size=32, max_size=32))
def test_owners_are_one_full_shard(m, q, h):
    smap = _map(m, q)
    owners = smap.owners(AddrId(h, 0, 1))
    assert len(owners) == q
    assert owners in smap.shards
    assert smap.shard_count == m // q
    assert owners == smap.shards[int.from_bytes(h[:8], "big") % (m // q)]


def test_shard_map_authorization():
    smap = _map(6, 3)
    assert smap.verify(BANK.pk)
    assert not smap.verify(crypto.keygen(b"other", "test").pk)
    assert smap.quorum == 2
    assert smap.shard_of("m4") == 1


def test_shard_map_rejects_bad_sizes():
    with pytest.raises(ValueError):
        _map(2, 3)
    with pytest.raises(ValueError):
        _map(6, 2)
