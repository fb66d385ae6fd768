"""A centrally banked cryptocurrency with sharded mintettes.

Transactions are validated by a two-phase commit against small shards of
authorized mintettes, sealed into per-period blocks by a central bank, and
remain auditable through hash-chained mintette action logs.
"""

from .bank import Bank, HigherBlock, PeriodArchive
from .client import TxReceipt, TxStatus, Wallet, message_budget, validate_transaction
from .core import AddrId, Output, Transaction, TxKind, check_tx, make_tx
from .crypto import H, KeyPair, keygen
from .mintette import LowerBlock, Mintette
from .sharding import ShardMap, build_shard_map, shard_security_probability

__version__ = "0.1.0"

__all__ = [
    "AddrId",
    "Bank",
    "H",
    "HigherBlock",
    "KeyPair",
    "LowerBlock",
    "Mintette",
    "Output",
    "PeriodArchive",
    "ShardMap",
    "Transaction",
    "TxKind",
    "TxReceipt",
    "TxStatus",
    "Wallet",
    "build_shard_map",
    "check_tx",
    "keygen",
    "make_tx",
    "message_budget",
    "shard_security_probability",
    "validate_transaction",
]
