"""Canonical binary encoding.

Every registered record is written as a 1-byte type tag followed by its
fields in declaration order.  Integers are fixed-width big-endian, byte
strings and lists carry a 4-byte length prefix.  The same bytes are used
for hashing, signing, the wire protocol and on-disk archives, so the
layout must never depend on dict ordering or platform details.
"""

from __future__ import annotations

import dataclasses
import enum
import struct
from typing import Any, Callable

U64_MAX = 2**64 - 1


class EncodingError(ValueError):
    pass


class Kind:
    def encode(self, value: Any, out: bytearray) -> None:
        raise NotImplementedError

    def decode(self, buf: memoryview, pos: int) -> tuple[Any, int]:
        raise NotImplementedError


def _need(buf: memoryview, pos: int, n: int) -> None:
    if pos + n > len(buf):
        raise EncodingError("truncated input")


class _U8(Kind):
    def encode(self, value, out):
        if not 0 <= value <= 0xFF:
            raise EncodingError(f"u8 out of range: {value}")
        out.append(value)

    def decode(self, buf, pos):
        _need(buf, pos, 1)
        return buf[pos], pos + 1


class _U64(Kind):
    def encode(self, value, out):
        if isinstance(value, bool) or not isinstance(value, int):
            raise EncodingError(f"expected int, got {type(value).__name__}")
        if not 0 <= value <= U64_MAX:
            raise EncodingError(f"u64 out of range: {value}")
        out += struct.pack(">Q", value)

    def decode(self, buf, pos):
        _need(buf, pos, 8)
        return struct.unpack_from(">Q", buf, pos)[0], pos + 8


class _Bool(Kind):
    def encode(self, value, out):
        out.append(1 if value else 0)

    def decode(self, buf, pos):
        _need(buf, pos, 1)
        if buf[pos] > 1:
            raise EncodingError("bad bool byte")
        return bool(buf[pos]), pos + 1


class _Bytes(Kind):
    def encode(self, value, out):
        if not isinstance(value, (bytes, bytearray)):
            raise EncodingError(f"expected bytes, got {type(value).__name__}")
        out += struct.pack(">I", len(value))
        out += value

    def decode(self, buf, pos):
        _need(buf, pos, 4)
        (n,) = struct.unpack_from(">I", buf, pos)
        pos += 4
        _need(buf, pos, n)
        return bytes(buf[pos : pos + n]), pos + n


class _Fixed(Kind):
    def __init__(self, size: int):
        self.size = size

    def encode(self, value, out):
        if not isinstance(value, (bytes, bytearray)) or len(value) != self.size:
            raise EncodingError(f"expected {self.size} bytes")
        out += value

    def decode(self, buf, pos):
        _need(buf, pos, self.size)
        return bytes(buf[pos : pos + self.size]), pos + self.size


class _Str(Kind):
    def encode(self, value, out):
        BYTES.encode(value.encode("utf-8"), out)

    def decode(self, buf, pos):
        raw, pos = BYTES.decode(buf, pos)
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise EncodingError(f"bad utf-8: {exc}") from None


class List(Kind):
    def __init__(self, item: Kind):
        self.item = item

    def encode(self, value, out):
        out += struct.pack(">I", len(value))
        for v in value:
            self.item.encode(v, out)

    def decode(self, buf, pos):
        _need(buf, pos, 4)
        (n,) = struct.unpack_from(">I", buf, pos)
        pos += 4
        items = []
        for _ in range(n):
            v, pos = self.item.decode(buf, pos)
            items.append(v)
        return tuple(items), pos


class Opt(Kind):
    def __init__(self, item: Kind):
        self.item = item

    def encode(self, value, out):
        if value is None:
            out.append(0)
        else:
            out.append(1)
            self.item.encode(value, out)

    def decode(self, buf, pos):
        _need(buf, pos, 1)
        flag = buf[pos]
        if flag == 0:
            return None, pos + 1
        if flag != 1:
            raise EncodingError("bad option flag")
        return self.item.decode(buf, pos + 1)


class Tuple(Kind):
    def __init__(self, *items: Kind):
        self.items = items

    def encode(self, value, out):
        if len(value) != len(self.items):
            raise EncodingError("tuple arity mismatch")
        for k, v in zip(self.items, value):
            k.encode(v, out)

    def decode(self, buf, pos):
        vals = []
        for k in self.items:
            v, pos = k.decode(buf, pos)
            vals.append(v)
        return tuple(vals), pos


class EnumKind(Kind):
    def __init__(self, enum_cls: type[enum.IntEnum]):
        self.enum_cls = enum_cls

    def encode(self, value, out):
        U8.encode(int(value), out)

    def decode(self, buf, pos):
        v, pos = U8.decode(buf, pos)
        try:
            return self.enum_cls(v), pos
        except ValueError as exc:
            raise EncodingError(str(exc)) from None


class _Obj(Kind):
    """Any registered record, tag included."""

    def encode(self, value, out):
        layout = _BY_TYPE.get(type(value))
        if layout is None:
            raise EncodingError(f"unregistered type {type(value).__name__}")
        out.append(layout.tag)
        for name, kind in layout.fields:
            kind.encode(getattr(value, name), out)

    def decode(self, buf, pos):
        _need(buf, pos, 1)
        layout = _BY_TAG.get(buf[pos])
        if layout is None:
            raise EncodingError(f"unknown tag 0x{buf[pos]:02x}")
        pos += 1
        kwargs = {}
        for name, kind in layout.fields:
            kwargs[name], pos = kind.decode(buf, pos)
        try:
            return layout.cls(**kwargs), pos
        except (TypeError, ValueError) as exc:
            # record invariants reject the decoded fields
            raise EncodingError(f"invalid {layout.cls.__name__}: {exc}") from None


class _Addr(Kind):
    """A plain public key (bytes) or a registered spend condition."""

    def encode(self, value, out):
        if isinstance(value, (bytes, bytearray)):
            out.append(0)
            BYTES.encode(value, out)
        else:
            out.append(1)
            OBJ.encode(value, out)

    def decode(self, buf, pos):
        _need(buf, pos, 1)
        flag = buf[pos]
        if flag == 0:
            return BYTES.decode(buf, pos + 1)
        if flag == 1:
            return OBJ.decode(buf, pos + 1)
        raise EncodingError("bad address flag")


U8 = _U8()
U64 = _U64()
BOOL = _Bool()
BYTES = _Bytes()
HASH = _Fixed(32)
STR = _Str()
OBJ = _Obj()
ADDR = _Addr()


@dataclasses.dataclass(frozen=True)
class _Layout:
    tag: int
    cls: type
    fields: tuple[tuple[str, Kind], ...]


_BY_TAG: dict[int, _Layout] = {}
_BY_TYPE: dict[type, _Layout] = {}


def record(tag: int, **fields: Kind) -> Callable[[type], type]:
    """Register a dataclass for canonical encoding under ``tag``.

    ``fields`` must list every dataclass field in declaration order.
    """

    def wrap(cls: type) -> type:
        names = [f.name for f in dataclasses.fields(cls)]
        if names != list(fields):
            raise TypeError(f"{cls.__name__}: codec fields {list(fields)} != {names}")
        if tag in _BY_TAG:
            raise TypeError(f"tag 0x{tag:02x} already used by {_BY_TAG[tag].cls.__name__}")
        layout = _Layout(tag, cls, tuple(fields.items()))
        _BY_TAG[tag] = layout
        _BY_TYPE[cls] = layout
        return cls

    return wrap


def encode(value: Any) -> bytes:
    out = bytearray()
    OBJ.encode(value, out)
    return bytes(out)


def decode(data: bytes) -> Any:
    buf = memoryview(data)
    value, pos = OBJ.decode(buf, 0)
    if pos != len(buf):
        raise EncodingError(f"{len(buf) - pos} trailing bytes")
    return value


def encode_many(values) -> bytes:
    """Concatenated encodings with a count prefix, for sets and logs."""
    out = bytearray(struct.pack(">I", len(values)))
    for v in values:
        OBJ.encode(v, out)
    return bytes(out)


def decode_many(data: bytes) -> tuple:
    value, pos = List(OBJ).decode(memoryview(data), 0)
    if pos != len(data):
        raise EncodingError("trailing bytes")
    return value
