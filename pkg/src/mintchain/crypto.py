"""Hashing and signatures.

Two signature schemes are available.  ``ed25519`` is the production scheme.
``test`` is a fast keyed-hash construction for simulations and fixtures: it
is deterministic and detects any bit flip, but it is NOT unforgeable
(anyone holding a public key can sign for it).  Public keys carry a one
byte scheme prefix so verification dispatches without global state.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

HASH_SIZE = 32

_ED25519 = 0x01
_TEST = 0x7F

Hash = bytes


def H(*parts: bytes) -> Hash:
    """SHA-256 over the concatenation of ``parts``."""
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


@dataclass(frozen=True)
class KeyPair:
    sk: bytes
    pk: bytes

    @property
    def scheme(self) -> str:
        return "ed25519" if self.pk[0] == _ED25519 else "test"

    def sign(self, message: bytes) -> bytes:
        return sign(self.sk, message)


def keygen(seed: bytes | None = None, scheme: str = "ed25519") -> KeyPair:
    """Create a key pair; a ``seed`` makes it reproducible."""
    raw = H(b"keygen", seed) if seed is not None else os.urandom(32)
    if scheme == "ed25519":
        priv = Ed25519PrivateKey.from_private_bytes(raw)
        pub = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(bytes([_ED25519]) + raw, bytes([_ED25519]) + pub)
    if scheme == "test":
        return KeyPair(bytes([_TEST]) + raw, bytes([_TEST]) + H(b"test-pk", raw))
    raise ValueError(f"unknown signature scheme {scheme!r}")


@lru_cache(maxsize=4096)
def _ed_private(raw: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(raw)


@lru_cache(maxsize=4096)
def _ed_public(raw: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(raw)


def sign(sk: bytes, message: bytes) -> bytes:
    if not sk:
        raise ValueError("empty secret key")
    if sk[0] == _ED25519:
        return _ed_private(sk[1:]).sign(message)
    if sk[0] == _TEST:
        return H(b"test-sig", H(b"test-pk", sk[1:]), message)
    raise ValueError("unknown key scheme")


@lru_cache(maxsize=1 << 16)
def verify(pk: bytes, message: bytes, sig: bytes) -> bool:
    """True iff ``sig`` is a valid signature on ``message`` under ``pk``.

    Memoised: verification is a pure function and the same vote is often
    checked by client, mintettes and auditors.
    """
    if len(pk) != 33:
        return False
    if pk[0] == _ED25519:
        if len(sig) != 64:
            return False
        try:
            _ed_public(pk[1:]).verify(sig, message)
        except (InvalidSignature, ValueError):
            return False
        return True
    if pk[0] == _TEST:
        return sig == H(b"test-sig", pk[1:], message)
    return False
