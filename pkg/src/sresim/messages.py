"""Wire encodings for the control/data packet vocabulary and error records.

Every message is a little-endian header ``{version:u8, kind:u8,
length:u16}`` followed by a kind-specific payload. Pointers are abstract
buffer indices, never addresses. The codec is bit-exact and loss-free:
``decode(encode(m)) == m`` for every message kind.

Error-code values are stable:

====  =======================
code  meaning
====  =======================
0     ok
1     timeout
2     resource-infeasible
3     queue-overflow
4     dct-unsupported
5     write-before-read
6     max-parallel-exceeded
====  =======================
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

VERSION = 1

E_OK = 0
E_TIMEOUT = 1
E_RESOURCE = 2
E_QUEUE_OVERFLOW = 3
E_DCT_UNSUPPORTED = 4
E_WRITE_BEFORE_READ = 5
E_MAX_PARALLEL = 6

ERROR_NAMES = {
    E_OK: "ok",
    E_TIMEOUT: "timeout",
    E_RESOURCE: "resource-infeasible",
    E_QUEUE_OVERFLOW: "queue-overflow",
    E_DCT_UNSUPPORTED: "dct-unsupported",
    E_WRITE_BEFORE_READ: "write-before-read",
    E_MAX_PARALLEL: "max-parallel-exceeded",
}


class CodecError(ValueError):
    pass


class BadVersionError(CodecError):
    pass


class UnknownKindError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


@dataclass(frozen=True)
class ControlPacket:
    global_tag: int
    container_id: int
    source_id: int
    arrival_time_cc: int


@dataclass(frozen=True)
class DataPacket:
    global_tag: int
    port: int
    payload: bytes


@dataclass(frozen=True)
class ErrorPacket:
    global_tag: int
    code: int
    timestamp_cc: int


@dataclass(frozen=True)
class DctRequest:
    container_id: int
    source_id: int


@dataclass(frozen=True)
class DffDescriptor:
    global_tag: int
    container_id: int
    microflow_count: int
    timeout_cc: int


@dataclass(frozen=True)
class DffRelease:
    global_tag: int


@dataclass(frozen=True)
class PointerDescriptor:
    global_tag: int
    stage_id: int
    buffer_index: int
    size_bytes: int


@dataclass(frozen=True)
class MicroflowDescriptor:
    global_tag: int
    local_tag: int
    stage_id: int
    kernel_name: str
    min_cc: int
    max_cc: int
    compute_units: int
    memory_units: int
    deadline_cc: int | None
    inputs: tuple = ()   # (src_tag, src_port, bytes)
    outputs: tuple = ()


@dataclass(frozen=True)
class DffInputReady:
    global_tag: int
    port: int


@dataclass(frozen=True)
class DffOutputReady:
    global_tag: int
    port: int


@dataclass(frozen=True)
class ErrorMessage:
    global_tag: int
    local_tag: int
    code: int
    inherited_code: int | None
    timestamp_cc: int


KIND_CODES = {
    ControlPacket: 1,
    DataPacket: 2,
    ErrorPacket: 3,
    DctRequest: 4,
    DffDescriptor: 5,
    DffRelease: 6,
    PointerDescriptor: 7,
    MicroflowDescriptor: 8,
    DffInputReady: 9,
    DffOutputReady: 10,
    ErrorMessage: 11,
}
KIND_TYPES = {v: k for k, v in KIND_CODES.items()}

_NONE_U32 = 0xFFFFFFFF
_NONE_U16 = 0xFFFF


def _pack_ports(entries):
    out = struct.pack("<B", len(entries))
    for tag, port, nbytes in entries:
        out += struct.pack("<HHI", tag, port, nbytes)
    return out


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise TruncatedError("truncated body")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def take_bytes(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError("truncated body")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return bytes(out)

    def done(self):
        if self.pos != len(self.buf):
            raise CodecError("trailing bytes in body")


def _encode_body(m):
    if isinstance(m, ControlPacket):
        return struct.pack("<IHHQ", m.global_tag, m.container_id, m.source_id,
                           m.arrival_time_cc)
    if isinstance(m, DataPacket):
        return struct.pack("<IHH", m.global_tag, m.port, len(m.payload)) + m.payload
    if isinstance(m, ErrorPacket):
        return struct.pack("<IHQ", m.global_tag, m.code, m.timestamp_cc)
    if isinstance(m, DctRequest):
        return struct.pack("<HH", m.container_id, m.source_id)
    if isinstance(m, DffDescriptor):
        return struct.pack("<IHHI", m.global_tag, m.container_id,
                           m.microflow_count, m.timeout_cc)
    if isinstance(m, DffRelease):
        return struct.pack("<I", m.global_tag)
    if isinstance(m, PointerDescriptor):
        return struct.pack("<IHII", m.global_tag, m.stage_id, m.buffer_index,
                           m.size_bytes)
    if isinstance(m, MicroflowDescriptor):
        name = m.kernel_name.encode("utf-8")
        if len(name) > 255:
            raise CodecError("kernel name longer than 255 bytes")
        deadline = _NONE_U32 if m.deadline_cc is None else m.deadline_cc
        body = struct.pack("<IHHIIHHI", m.global_tag, m.local_tag, m.stage_id,
                           m.min_cc, m.max_cc, m.compute_units, m.memory_units,
                           deadline)
        body += struct.pack("<B", len(name)) + name
        body += _pack_ports(m.inputs)
        body += _pack_ports(m.outputs)
        return body
    if isinstance(m, DffInputReady):
        return struct.pack("<IH", m.global_tag, m.port)
    if isinstance(m, DffOutputReady):
        return struct.pack("<IH", m.global_tag, m.port)
    if isinstance(m, ErrorMessage):
        inherited = _NONE_U16 if m.inherited_code is None else m.inherited_code
        return struct.pack("<IHHHQ", m.global_tag, m.local_tag, m.code,
                           inherited, m.timestamp_cc)
    raise CodecError(f"not a message: {m!r}")


def encode(m) -> bytes:
    body = _encode_body(m)
    if len(body) > 0xFFFF:
        raise CodecError("body too large")
    return struct.pack("<BBH", VERSION, KIND_CODES[type(m)], len(body)) + body


def decode(buf: bytes):
    if len(buf) < 4:
        raise TruncatedError("truncated header")
    version, kind, length = struct.unpack_from("<BBH", buf, 0)
    if version != VERSION:
        raise BadVersionError(f"bad version {version}")
    if kind not in KIND_TYPES:
        raise UnknownKindError(f"unknown kind {kind}")
    if len(buf) != 4 + length:
        raise TruncatedError("truncated body")
    r = _Reader(buf[4:])
    cls = KIND_TYPES[kind]
    if cls is ControlPacket:
        m = ControlPacket(*r.take("<IHHQ"))
    elif cls is DataPacket:
        gtag, port, n = r.take("<IHH")
        m = DataPacket(gtag, port, r.take_bytes(n))
    elif cls is ErrorPacket:
        m = ErrorPacket(*r.take("<IHQ"))
    elif cls is DctRequest:
        m = DctRequest(*r.take("<HH"))
    elif cls is DffDescriptor:
        m = DffDescriptor(*r.take("<IHHI"))
    elif cls is DffRelease:
        m = DffRelease(*r.take("<I"))
    elif cls is PointerDescriptor:
        m = PointerDescriptor(*r.take("<IHII"))
    elif cls is MicroflowDescriptor:
        gtag, ltag, stage, mn, mx, cu, mu, deadline = r.take("<IHHIIHHI")
        (namelen,) = r.take("<B")
        name = r.take_bytes(namelen).decode("utf-8")
        (n_in,) = r.take("<B")
        inputs = tuple(r.take("<HHI") for _ in range(n_in))
        (n_out,) = r.take("<B")
        outputs = tuple(r.take("<HHI") for _ in range(n_out))
        m = MicroflowDescriptor(
            gtag, ltag, stage, name, mn, mx, cu, mu,
            None if deadline == _NONE_U32 else deadline, inputs, outputs)
    elif cls is DffInputReady:
        m = DffInputReady(*r.take("<IH"))
    elif cls is DffOutputReady:
        m = DffOutputReady(*r.take("<IH"))
    else:
        gtag, ltag, code, inherited, ts = r.take("<IHHHQ")
        m = ErrorMessage(gtag, ltag, code,
                         None if inherited == _NONE_U16 else inherited, ts)
    r.done()
    return m


def render_text(m) -> str:
    """One-line rendering used inside simulator traces."""
    name = type(m).__name__
    parts = []
    for f in fields(m):
        val = getattr(m, f.name)
        if isinstance(val, bytes):
            val = val.hex()
        parts.append(f"{f.name}={val}")
    return f"{name}({', '.join(parts)})"


@dataclass(frozen=True)
class ErrorRecord:
    """A failure with provenance: consumers inherit their producer's code."""

    code: int
    origin: tuple  # (global_tag, local_tag)
    timestamp_cc: int
    inherited_from: int | None = None


def propagate_error(producer: ErrorRecord, consumer_tag, now_cc=None) -> ErrorRecord:
    """Record a consumer failure caused by ``producer``.

    The consumer's timestamp never precedes the producer's. When several
    producers failed, callers pass the earliest-timestamp one (ties broken
    by origin tag) so chains always trace back to a single root code.
    """
    ts = producer.timestamp_cc if now_cc is None else max(now_cc, producer.timestamp_cc)
    return ErrorRecord(
        code=producer.code,
        origin=tuple(consumer_tag),
        timestamp_cc=ts,
        inherited_from=producer.code if producer.inherited_from is None
        else producer.inherited_from,
    )


def pick_root_producer(producers):
    """Earliest-timestamp producer wins; origin tag breaks ties."""
    return min(producers, key=lambda r: (r.timestamp_cc, r.origin))
