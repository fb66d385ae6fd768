"""Shard assignment and the honest-majority security calculator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import betainc

from . import crypto
from .core import AddrId
from .crypto import Hash
from .encoding import BYTES, OBJ, STR, U64, List, encode, record


@record(0x10, pk=BYTES, period=U64)
@dataclass(frozen=True)
class AuthorizationStatement:
    pk: bytes
    period: int


def authorization_message(pk: bytes, period: int) -> bytes:
    return encode(AuthorizationStatement(pk, period))


@record(0x11, mintette_id=STR, pk=BYTES, bank_sig=BYTES)
@dataclass(frozen=True)
class MintetteInfo:
    mintette_id: str
    pk: bytes
    bank_sig: bytes


@record(0x12, period=U64, mintettes=List(OBJ), shard_size=U64, shards=List(List(STR)))
@dataclass(frozen=True)
class ShardMap:
    period: int
    mintettes: tuple[MintetteInfo, ...]
    shard_size: int
    shards: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        q = self.shard_size
        if q < 1 or q % 2 == 0:
            raise ValueError(f"shard size must be a positive odd integer, got {q}")
        if len(self.shards) != len(self.mintettes) // q or not self.shards:
            raise ValueError("shard count must equal floor(M / Q) and be positive")
        known = {m.mintette_id for m in self.mintettes}
        if len(known) != len(self.mintettes):
            raise ValueError("duplicate mintette id")
        seen: set[str] = set()
        for shard in self.shards:
            if len(shard) != q or len(set(shard)) != q:
                raise ValueError("every shard needs exactly Q distinct mintettes")
            if not set(shard) <= known:
                raise ValueError("shard names an unknown mintette")
            if seen & set(shard):
                raise ValueError("mintette assigned to two shards")
            seen |= set(shard)

    @property
    def shard_count(self) -> int:
        return len(self.shards)

    @property
    def quorum(self) -> int:
        return (self.shard_size + 1) // 2

    @cached_property
    def by_id(self) -> dict[str, MintetteInfo]:
        return {m.mintette_id: m for m in self.mintettes}

    def pk(self, mintette_id: str) -> bytes:
        return self.by_id[mintette_id].pk

    def shard_index(self, tx_hash: Hash) -> int:
        return int.from_bytes(tx_hash[:8], "big") % len(self.shards)

    def owners_of_tx(self, tx_hash: Hash) -> tuple[str, ...]:
        return self.shards[self.shard_index(tx_hash)]

    def owners(self, addr_id: AddrId) -> tuple[str, ...]:
        return self.owners_of_tx(addr_id.tx_hash)

    def shard_of(self, mintette_id: str) -> int | None:
        for i, shard in enumerate(self.shards):
            if mintette_id in shard:
                return i
        return None

    def verify(self, bank_pk: bytes) -> bool:
        """Every listed key carries a valid bank signature for this period."""
        return all(
            crypto.verify(bank_pk, authorization_message(m.pk, self.period), m.bank_sig)
            for m in self.mintettes
        )


def owners(shard_map: ShardMap, addr_id: AddrId) -> tuple[str, ...]:
    return shard_map.owners(addr_id)


def build_shard_map(
    period: int,
    mintettes: list[tuple[str, bytes]],
    shard_size: int,
    bank: crypto.KeyPair,
) -> ShardMap:
    """Sign every key for ``period`` and partition into floor(M/Q) shards.

    Mintettes are chunked in the order given; any remainder is authorized
    but owns no shard.
    """
    if shard_size < 1 or shard_size % 2 == 0:
        raise ValueError("shard size must be a positive odd integer")
    if len(mintettes) < shard_size:
        raise ValueError(f"need at least Q={shard_size} mintettes, got {len(mintettes)}")
    infos = tuple(
        MintetteInfo(mid, pk, bank.sign(authorization_message(pk, period)))
        for mid, pk in mintettes
    )
    y = len(infos) // shard_size
    ids = [m.mintette_id for m in infos]
    shards = tuple(tuple(ids[i * shard_size : (i + 1) * shard_size]) for i in range(y))
    return ShardMap(period, infos, shard_size, shards)


def _check_params(alpha: float, q: int, y: int) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if q < 1 or q % 2 == 0:
        raise ValueError("Q must be a positive odd integer")
    if y < 1:
        raise ValueError("y must be a positive integer")


def shard_security_probability(alpha: float, q: int, y: int) -> float:
    """Probability that ``y`` shards of ``q`` mintettes all keep an honest majority.

    Each mintette is corrupt independently with probability ``alpha``; a
    shard is safe when at most (q-1)/2 members are corrupt.
    """
    _check_params(alpha, q, y)
    k = (q - 1) // 2
    # binomial CDF F(k; q, alpha) = I_{1-alpha}(q - k, k + 1)
    rho = float(betainc(q - k, k + 1, 1.0 - alpha))
    return rho**y


def monte_carlo_security(
    alpha: float,
    q: int,
    y: int,
    trials: int = 100_000,
    rng: np.random.Generator | None = None,
    fixed_fraction: bool = False,
) -> tuple[float, float]:
    """Empirical all-shards-honest frequency and its standard error.

    M = y*q mintettes are partitioned into y shards of q.  By default each
    is corrupted independently with probability ``alpha``.  With
    ``fixed_fraction`` exactly round(alpha*M) are corrupt, drawn without
    replacement, which is the sampling the closed form only approximates.
    """
    _check_params(alpha, q, y)
    rng = rng if rng is not None else np.random.default_rng()
    m = y * q
    limit = (q - 1) // 2
    secure = 0
    batch = max(1, min(trials, 2_000_000 // m))
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        if fixed_fraction:
            bad = int(round(alpha * m))
            keys = rng.random((n, m))
            ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
            corrupt = ranks < bad
        else:
            corrupt = rng.random((n, m)) < alpha
        per_shard = corrupt.reshape(n, y, q).sum(axis=2)
        secure += int(np.count_nonzero((per_shard <= limit).all(axis=1)))
        done += n
    p = secure / trials
    return p, math.sqrt(max(p * (1 - p), 1e-300) / trials)
