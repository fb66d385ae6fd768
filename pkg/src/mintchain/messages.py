"""Wire messages between users, mintettes and the bank.

Messages travel as canonical encodings behind a 4-byte big-endian length
prefix.  :func:`dispatch` maps a request onto a mintette's state machine
and is shared by every transport.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

from .core import AddrId, Output, Transaction
from .crypto import Hash
from .encoding import BYTES, HASH, OBJ, STR, U64, List, Tuple, decode, encode, record
from .mintette import EvidenceBundle, LogEntry, LowerBlock, Mintette, Refusal, Vote
from .sharding import ShardMap


@record(0x40, tx=OBJ, addr_id=OBJ)
@dataclass(frozen=True)
class QueryReq:
    tx: Transaction
    addr_id: AddrId


@record(0x41, result=OBJ)
@dataclass(frozen=True)
class QueryResp:
    result: Union[Vote, Refusal]


@record(0x42, tx=OBJ, period=U64, bundle=OBJ)
@dataclass(frozen=True)
class CommitReq:
    tx: Transaction
    period: int
    bundle: EvidenceBundle


@record(0x43, result=OBJ)
@dataclass(frozen=True)
class CommitResp:
    result: Union[Vote, Refusal]


@record(0x44)
@dataclass(frozen=True)
class EndPeriodReq:
    pass


@record(0x45, lower_blocks=List(OBJ), log=List(OBJ))
@dataclass(frozen=True)
class EndPeriodResp:
    lower_blocks: tuple[LowerBlock, ...]
    log: tuple[LogEntry, ...]


@record(0x46, addr_id=OBJ, output=OBJ)
@dataclass(frozen=True)
class UtxoEntry:
    addr_id: AddrId
    output: Output


@record(0x47, shard_map=OBJ, bank_hash=HASH, utxo=List(OBJ))
@dataclass(frozen=True)
class NewPeriodReq:
    shard_map: ShardMap
    bank_hash: Hash
    utxo: tuple[UtxoEntry, ...]


@record(0x48, period=U64)
@dataclass(frozen=True)
class Ack:
    period: int


@record(0x4D, request_id=U64, body=OBJ)
@dataclass(frozen=True)
class Envelope:
    """Tags a message so pipelined replies can be matched out of order."""

    request_id: int
    body: object


@record(0x4E)
@dataclass(frozen=True)
class HelloReq:
    pass


@record(0x4F, mintette_id=STR, pk=BYTES)
@dataclass(frozen=True)
class HelloResp:
    mintette_id: str
    pk: bytes


@record(0x50)
@dataclass(frozen=True)
class InfoReq:
    pass


@record(0x51, period=U64, bank_head=HASH, bank_pk=BYTES, shard_map=OBJ, endpoints=List(Tuple(STR, STR)))
@dataclass(frozen=True)
class InfoResp:
    period: int
    bank_head: Hash
    bank_pk: bytes
    shard_map: ShardMap
    # (mintette id, "host:port")
    endpoints: tuple[tuple[str, str], ...]


@record(0x52, addr=BYTES)
@dataclass(frozen=True)
class CoinsReq:
    addr: bytes


@record(0x53, coins=List(OBJ))
@dataclass(frozen=True)
class CoinsResp:
    coins: tuple[UtxoEntry, ...]


Request = Union[QueryReq, CommitReq, EndPeriodReq, NewPeriodReq]


def dispatch(mintette: Mintette, req) -> object:
    if isinstance(req, QueryReq):
        return QueryResp(mintette.check_not_double_spent(req.tx, req.addr_id))
    if isinstance(req, CommitReq):
        return CommitResp(mintette.commit_tx(req.tx, req.period, req.bundle))
    if isinstance(req, EndPeriodReq):
        blocks, log = mintette.end_period()
        return EndPeriodResp(tuple(blocks), tuple(log))
    if isinstance(req, NewPeriodReq):
        mintette.begin_period(req.shard_map, req.bank_hash, {u.addr_id: u.output for u in req.utxo})
        return Ack(req.shard_map.period)
    raise TypeError(f"unexpected request {type(req).__name__}")


def frame(message) -> bytes:
    raw = encode(message)
    return struct.pack(">I", len(raw)) + raw


def unframe_length(header: bytes) -> int:
    return struct.unpack(">I", header)[0]


def parse(raw: bytes) -> object:
    return decode(raw)


def result_of(resp) -> Optional[Union[Vote, Refusal]]:
    return None if resp is None else resp.result
