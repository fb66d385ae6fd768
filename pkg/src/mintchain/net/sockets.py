"""TCP backend: persistent, pipelined connections carrying framed messages.

Every message travels inside an :class:`Envelope` so replies can be
matched to requests on a shared connection.  Each mintette server handles
one request at a time to completion (handlers never await mid-update), so
its state machine is serialized while many connections stay open.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import struct
from typing import Optional, Sequence

from .. import crypto
from ..bank import Bank, PeriodArchive
from ..client import TxReceipt, avalidate_transaction, check_budget
from ..core import Transaction
from ..encoding import EncodingError, decode, encode
from ..messages import (
    CoinsReq,
    CoinsResp,
    EndPeriodReq,
    Envelope,
    HelloReq,
    HelloResp,
    InfoReq,
    InfoResp,
    NewPeriodReq,
    UtxoEntry,
    dispatch,
)
from ..mintette import Mintette
from .behaviours import is_silent

log = logging.getLogger(__name__)

MAX_FRAME = 64 << 20


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    header = await reader.readexactly(4)
    (n,) = struct.unpack(">I", header)
    if n > MAX_FRAME:
        raise EncodingError(f"frame of {n} bytes exceeds limit")
    return await reader.readexactly(n)


def write_frame(writer: asyncio.StreamWriter, message) -> None:
    raw = encode(message)
    writer.write(struct.pack(">I", len(raw)) + raw)


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


class _Service:
    """Accept loop shared by mintette and bank servers."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.host = host
        self.port = port
        self._server: Optional[asyncio.AbstractServer] = None

    def handle(self, body):
        raise NotImplementedError

    async def start(self) -> "_Service":
        self._server = await asyncio.start_server(self._client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                raw = await read_frame(reader)
                env = decode(raw)
                if not isinstance(env, Envelope):
                    raise EncodingError("expected an envelope")
                resp = self.handle(env.body)
                if resp is not None:
                    write_frame(writer, Envelope(env.request_id, resp))
                    await writer.drain()
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        except EncodingError as exc:
            log.warning("dropping connection after bad frame: %s", exc)
        finally:
            writer.close()


class MintetteServer(_Service):
    def __init__(self, mintette: Mintette, host: str = "127.0.0.1", port: int = 0):
        super().__init__(host, port)
        self.mintette = mintette

    def handle(self, body):
        if isinstance(body, HelloReq):
            return HelloResp(self.mintette.id, self.mintette.pk)
        user_facing = not isinstance(body, (EndPeriodReq, NewPeriodReq))
        if user_facing and is_silent(self.mintette):
            return None
        return dispatch(self.mintette, body)


class BankServer(_Service):
    """Answers users' questions about the current period and their coins."""

    def __init__(self, bank: Bank, endpoints: dict[str, str], host: str = "127.0.0.1", port: int = 0):
        super().__init__(host, port)
        self.bank = bank
        self.endpoints = endpoints

    def handle(self, body):
        if isinstance(body, InfoReq):
            return InfoResp(
                self.bank.period,
                self.bank.head,
                self.bank.pk,
                self.bank.shard_map,
                tuple(sorted(self.endpoints.items())),
            )
        if isinstance(body, CoinsReq):
            coins = sorted((a, o) for a, o in self.bank.utxo.outputs.items() if o.addr == body.addr)
            return CoinsResp(tuple(UtxoEntry(a, o) for a, o in coins))
        raise EncodingError(f"bank cannot handle {type(body).__name__}")


class _Connection:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self.pending: dict[int, asyncio.Future] = {}
        self.task = asyncio.ensure_future(self._pump())

    async def _pump(self) -> None:
        try:
            while True:
                env = decode(await read_frame(self.reader))
                fut = self.pending.pop(env.request_id, None)
                if fut is not None and not fut.done():
                    fut.set_result(env.body)
        except (asyncio.IncompleteReadError, ConnectionError, EncodingError):
            for fut in self.pending.values():
                if not fut.done():
                    fut.set_result(None)
            self.pending.clear()

    def close(self) -> None:
        self.task.cancel()
        self.writer.close()


class SocketTransport:
    """Async transport over one persistent connection per endpoint."""

    def __init__(self, endpoints: dict[str, str], timeout: float = 2.0):
        self.endpoints = dict(endpoints)
        self.timeout = timeout
        self._conns: dict[str, _Connection] = {}
        self._ids = itertools.count(1)
        self.sent = 0
        self.received = 0

    async def _conn(self, mid: str) -> _Connection:
        conn = self._conns.get(mid)
        if conn is None or conn.task.done():
            host, port = parse_endpoint(self.endpoints[mid])
            reader, writer = await asyncio.open_connection(host, port)
            conn = self._conns[mid] = _Connection(reader, writer)
        return conn

    async def call(self, mid: str, req, timeout: Optional[float] = None):
        """One request; None if no reply arrives within the timeout."""
        try:
            conn = await self._conn(mid)
        except (OSError, KeyError):
            return None
        rid = next(self._ids)
        fut = asyncio.get_running_loop().create_future()
        conn.pending[rid] = fut
        write_frame(conn.writer, Envelope(rid, req))
        try:
            await conn.writer.drain()
            return await asyncio.wait_for(fut, self.timeout if timeout is None else timeout)
        except (asyncio.TimeoutError, ConnectionError):
            conn.pending.pop(rid, None)
            return None

    async def exchange(self, requests: Sequence[tuple[str, object]]) -> list:
        self.sent += len(requests)
        out = await asyncio.gather(*(self.call(mid, req) for mid, req in requests))
        self.received += sum(r is not None for r in out)
        return list(out)

    async def close(self) -> None:
        for conn in self._conns.values():
            conn.close()
        self._conns.clear()


class SocketNetwork:
    """Loopback deployment: one server per mintette plus the bank coordinator."""

    def __init__(
        self,
        bank: Bank,
        mintettes: Sequence[Mintette] = (),
        host: str = "127.0.0.1",
        remote: Optional[dict[str, str]] = None,
    ):
        self.bank = bank
        self.servers = [MintetteServer(m, host) for m in mintettes]
        # mintettes running elsewhere, by id
        self.remote = dict(remote or {})
        self.transport: Optional[SocketTransport] = None
        self.receipts: list[TxReceipt] = []

    @classmethod
    def create(
        cls,
        m: int = 3,
        q: int = 3,
        *,
        seed: bytes = b"socket",
        scheme: str = "test",
        **bank_options,
    ) -> "SocketNetwork":
        bank = Bank(crypto.keygen(seed + b"/bank", scheme), shard_size=q, **bank_options)
        nodes = [Mintette(f"m{i}", crypto.keygen(seed + b"/m%d" % i, scheme)) for i in range(m)]
        return cls(bank, nodes)

    async def start(self, allocations=(), reserve: int = 1_000_000) -> "SocketNetwork":
        for s in self.servers:
            await s.start()
        endpoints = {s.mintette.id: s.endpoint for s in self.servers}
        endpoints.update(self.remote)
        self.transport = SocketTransport(endpoints)
        infos = []
        for mid in endpoints:
            hello = await self.transport.call(mid, HelloReq(), timeout=10)
            if hello is None:
                raise ConnectionError(f"mintette {mid} at {endpoints[mid]} is unreachable")
            if hello.mintette_id != mid:
                raise ConnectionError(f"endpoint {endpoints[mid]} answers as {hello.mintette_id}, expected {mid}")
            infos.append((hello.mintette_id, hello.pk))
        self.bank.genesis(infos, list(allocations), reserve)
        await self.start_period()
        return self

    async def start_period(self) -> None:
        smap = self.bank.shard_map
        for mid in sorted(self.transport.endpoints):
            utxo = tuple(UtxoEntry(a, o) for a, o in sorted(self.bank.utxo_slice(mid).items()))
            ack = await self.transport.call(mid, NewPeriodReq(smap, self.bank.head, utxo), timeout=30)
            if ack is None:
                raise ConnectionError(f"mintette {mid} did not acknowledge period {smap.period}")

    async def submit(self, tx: Transaction, *, short_circuit: bool = False) -> TxReceipt:
        receipt = await avalidate_transaction(
            tx, self.bank.period, self.transport, self.bank.shard_map, short_circuit=short_circuit
        )
        check_budget(receipt, self.bank.shard_map.shard_size)
        self.receipts.append(receipt)
        return receipt

    async def end_period(self, deadline: float = 5.0) -> PeriodArchive:
        """Collect blocks and logs; stragglers past ``deadline`` are excluded."""
        blocks, logs, missing = {}, {}, []
        for mid in sorted(self.transport.endpoints):
            resp = await self.transport.call(mid, EndPeriodReq(), timeout=deadline)
            if resp is None:
                missing.append(mid)
                continue
            blocks[mid] = list(resp.lower_blocks)
            logs[mid] = list(resp.log)
        archive = self.bank.close_period(blocks, logs, excluded=missing)
        await self.start_period()
        return archive

    async def close(self) -> None:
        if self.transport is not None:
            await self.transport.close()
        for s in self.servers:
            await s.close()

    async def __aenter__(self) -> "SocketNetwork":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.close()
