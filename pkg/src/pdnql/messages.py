"""Messages exchanged by the broker, the providers and the oblivious engine.

Frames are length-prefixed: an 8-byte little-endian body length, a 1-byte variant tag,
then the fields in declaration order. Integers are little-endian int64, strings are
length-prefixed UTF-8, relations are column headers, a row count, then per row a
validity byte and the values.
"""
from __future__ import annotations

import io
import socket
import struct
import threading
from dataclasses import dataclass, field, fields
from typing import Optional

from .catalog import ValueType
from .oblivious import PaddedRelation


@dataclass
class PlanFragment:
    fragment_id: int
    sql: str
    options: str
    action: str  # compile | census | secure_input | plaintext_track | gather | root | run | list
    op: int = -1  # operator or region id the action refers to
    table: str = ""
    partitions: list = field(default_factory=list)  # partition values (tuples)


@dataclass
class CensusRequest:
    fragment_id: int
    region: int
    key: list = field(default_factory=list)  # key column names, informational


@dataclass
class CensusReply:
    fragment_id: int
    region: int
    party: str
    values: list = field(default_factory=list)


@dataclass
class SecureStepInput:
    step: int
    input_index: int
    party: str
    partition: Optional[tuple]
    relation: PaddedRelation
    table: str = ""  # set when the payload is a membership list for IN


@dataclass
class LocalResult:
    fragment_id: int
    track: str  # plain | plaintext | root | decoded
    op: int
    partition: Optional[tuple]
    relation: PaddedRelation


@dataclass
class FinalResult:
    names: list
    relation: PaddedRelation


MESSAGE_TYPES = [PlanFragment, CensusRequest, CensusReply, SecureStepInput, LocalResult, FinalResult]
TAGS = {cls: i + 1 for i, cls in enumerate(MESSAGE_TYPES)}


class CodecError(ValueError):
    pass


# ---------------------------------------------------------------- codec

def _int(out, v: int) -> None:
    out.write(struct.pack("<q", v))


def _str(out, s: str) -> None:
    b = s.encode("utf-8")
    _int(out, len(b))
    out.write(b)


def _value(out, v) -> None:
    if v is None:
        out.write(b"\x00")
    elif isinstance(v, bool):
        raise CodecError("booleans are not relation values")
    elif isinstance(v, int):
        out.write(b"\x01")
        _int(out, v)
    elif isinstance(v, str):
        out.write(b"\x02")
        _str(out, v)
    else:
        raise CodecError(f"cannot encode value of type {type(v).__name__}")


def _values(out, vals) -> None:
    _int(out, len(vals))
    for v in vals:
        _value(out, v)


def _optional_tuple(out, t) -> None:
    if t is None:
        out.write(b"\x00")
    else:
        out.write(b"\x01")
        _values(out, list(t))


def _relation(out, r: PaddedRelation) -> None:
    _int(out, len(r.schema))
    for (name, vtype), cid in zip(r.schema, r.cids):
        _str(out, name)
        _str(out, vtype.value)
        _int(out, cid)
    _int(out, r.origin_counts[0])
    _int(out, r.origin_counts[1])
    _int(out, len(r.rows))
    for v, row in zip(r.valid, r.rows):
        out.write(b"\x01" if v else b"\x00")
        for x in row:
            _value(out, x)


class _Reader:
    def __init__(self, data: bytes):
        self.buf = io.BytesIO(data)

    def take(self, n: int) -> bytes:
        b = self.buf.read(n)
        if len(b) != n:
            raise CodecError("truncated frame")
        return b

    def int(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def str(self) -> str:
        return self.take(self.int()).decode("utf-8")

    def value(self):
        tag = self.take(1)
        if tag == b"\x00":
            return None
        if tag == b"\x01":
            return self.int()
        if tag == b"\x02":
            return self.str()
        raise CodecError(f"bad value tag {tag!r}")

    def values(self) -> list:
        return [self.value() for _ in range(self.int())]

    def optional_tuple(self):
        return None if self.take(1) == b"\x00" else tuple(self.values())

    def relation(self) -> PaddedRelation:
        schema, cids = [], []
        for _ in range(self.int()):
            name = self.str()
            schema.append((name, ValueType(self.str())))
            cids.append(self.int())
        origin = (self.int(), self.int())
        valid, rows = [], []
        for _ in range(self.int()):
            valid.append(self.take(1) == b"\x01")
            rows.append(tuple(self.value() for _ in schema))
        return PaddedRelation(schema, valid, rows, origin, cids)


_KIND = {
    "fragment_id": "int", "op": "int", "region": "int", "step": "int", "input_index": "int",
    "sql": "str", "options": "str", "action": "str", "table": "str", "party": "str", "track": "str",
    "partitions": "tuples", "key": "strs", "values": "tuples", "partition": "opt_tuple",
    "relation": "rel", "names": "strs",
}


def encode(msg) -> bytes:
    out = io.BytesIO()
    out.write(bytes([TAGS[type(msg)]]))
    for f in fields(msg):
        v = getattr(msg, f.name)
        kind = _KIND[f.name]
        if kind == "int":
            _int(out, v)
        elif kind == "str":
            _str(out, v)
        elif kind == "strs":
            _int(out, len(v))
            for s in v:
                _str(out, s)
        elif kind == "tuples":
            _int(out, len(v))
            for t in v:
                _values(out, list(t))
        elif kind == "opt_tuple":
            _optional_tuple(out, v)
        elif kind == "rel":
            _relation(out, v)
    body = out.getvalue()
    return struct.pack("<q", len(body)) + body


def decode(frame: bytes):
    if len(frame) < 9:
        raise CodecError("truncated frame")
    (length,) = struct.unpack("<q", frame[:8])
    if length != len(frame) - 8:
        raise CodecError("frame length mismatch")
    r = _Reader(frame[8:])
    tag = r.take(1)[0]
    if tag < 1 or tag > len(MESSAGE_TYPES):
        raise CodecError(f"unknown message tag {tag}")
    cls = MESSAGE_TYPES[tag - 1]
    kwargs = {}
    for f in fields(cls):
        kind = _KIND[f.name]
        if kind == "int":
            kwargs[f.name] = r.int()
        elif kind == "str":
            kwargs[f.name] = r.str()
        elif kind == "strs":
            kwargs[f.name] = [r.str() for _ in range(r.int())]
        elif kind == "tuples":
            kwargs[f.name] = [tuple(r.values()) for _ in range(r.int())]
        elif kind == "opt_tuple":
            kwargs[f.name] = r.optional_tuple()
        elif kind == "rel":
            kwargs[f.name] = r.relation()
    if r.buf.read(1):
        raise CodecError("trailing bytes in frame")
    return cls(**kwargs)


# ---------------------------------------------------------------- transport

@dataclass
class Envelope:
    seq: int
    src: str
    dst: str
    msg: object
    size: int


class Network:
    """Synchronous, ordered delivery between named actors; every message is recorded.

    Each message is encoded and decoded on the way, so the recorded traffic is exactly
    what the wire format carries.
    """

    def __init__(self, transport: Optional["SocketTransport"] = None):
        self.actors: dict[str, object] = {}
        self.log: list[Envelope] = []
        self.transport = transport

    def attach(self, name: str, actor) -> None:
        self.actors[name] = actor

    def send(self, src: str, dst: str, msg) -> None:
        frame = encode(msg)
        if self.transport is not None:
            frame = self.transport.carry(frame)
        delivered = decode(frame)
        self.log.append(Envelope(len(self.log), src, dst, delivered, len(frame)))
        for out_dst, out_msg in self.actors[dst].handle(src, delivered) or ():
            self.send(dst, out_dst, out_msg)

    def bytes_sent(self) -> int:
        return sum(e.size for e in self.log)

    def close(self) -> None:
        if self.transport is not None:
            self.transport.close()


class SocketTransport:
    """Carries frames through a local socket pair, exercising the framing end to end."""

    def __init__(self):
        self.a, self.b = socket.socketpair()

    def carry(self, frame: bytes) -> bytes:
        received = bytearray()

        def reader():
            header = self._recv(8)
            (n,) = struct.unpack("<q", header)
            received.extend(header + self._recv(n))

        t = threading.Thread(target=reader)
        t.start()
        self.a.sendall(frame)
        t.join()
        return bytes(received)

    def _recv(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.b.recv(n - len(buf))
            if not chunk:
                raise CodecError("socket closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def close(self) -> None:
        self.a.close()
        self.b.close()
