"""Bridge envelope: a small framed container carrying an optional tracing
block ahead of an opaque payload.

Wire layout (big-endian):

    magic    4 bytes  "EVB1"
    flags    1 byte   bit0 = tracing block present
    tracing  sample_id u64, probe count u16,
             then per probe: probe_id u16, t_ns u64, clock_id u8
    payload  remaining bytes (the serialized bus message, untouched)

The tracing block sits ahead of the payload so it is readable without
touching the (potentially large) payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import BadMagic, TruncatedEnvelope

MAGIC = b"EVB1"
FLAG_TRACING = 0x01

_TRACE_HEAD = struct.Struct(">QH")
_PROBE = struct.Struct(">QHB")  # packed as (t_ns, probe_id, clock_id)


@dataclass(frozen=True, slots=True)
class ProbeStamp:
    """One timestamped probe point on a sample's path."""
    probe_id: int
    t_ns: int
    clock_id: int


@dataclass(frozen=True, slots=True)
class TracingBlock:
    """Identifier plus append-ordered probe stamps for one sample."""
    sample_id: int
    probes: tuple[ProbeStamp, ...] = ()

    def append(self, probe_id: int, t_ns: int, clock_id: int) -> "TracingBlock":
        return TracingBlock(self.sample_id,
                            self.probes + (ProbeStamp(probe_id, t_ns, clock_id),))


def encode_envelope(payload: bytes, tracing: TracingBlock | None = None) -> bytes:
    parts = [MAGIC, bytes([FLAG_TRACING if tracing is not None else 0])]
    if tracing is not None:
        parts.append(_TRACE_HEAD.pack(tracing.sample_id, len(tracing.probes)))
        for p in tracing.probes:
            parts.append(_PROBE.pack(p.t_ns, p.probe_id, p.clock_id))
    parts.append(payload)
    return b"".join(parts)


def decode_envelope(data: bytes | memoryview) -> tuple[bytes, TracingBlock | None]:
    """Return (payload, tracing).  Raises BadMagic / TruncatedEnvelope."""
    data = memoryview(data)
    if len(data) >= 4 and bytes(data[:4]) != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < 5:
        raise TruncatedEnvelope("envelope shorter than header")
    flags = data[4]
    pos = 5
    tracing = None
    if flags & FLAG_TRACING:
        if len(data) < pos + _TRACE_HEAD.size:
            raise TruncatedEnvelope("tracing header truncated")
        sample_id, count = _TRACE_HEAD.unpack_from(data, pos)
        pos += _TRACE_HEAD.size
        need = count * _PROBE.size
        if len(data) < pos + need:
            raise TruncatedEnvelope("tracing probes truncated")
        probes = []
        for _ in range(count):
            t_ns, probe_id, clock_id = _PROBE.unpack_from(data, pos)
            pos += _PROBE.size
            probes.append(ProbeStamp(probe_id, t_ns, clock_id))
        tracing = TracingBlock(sample_id, tuple(probes))
    return bytes(data[pos:]), tracing


# --- bus message payload serialization ---------------------------------------
# A bus message travels over MQTT as: type tag (u16 length + UTF-8) followed
# by the raw value bytes.

def pack_bus_payload(type_tag: str, value: bytes) -> bytes:
    tag = type_tag.encode("utf-8")
    if len(tag) > 65535:
        raise ValueError("type tag too long")
    return len(tag).to_bytes(2, "big") + tag + value


def unpack_bus_payload(data: bytes | memoryview) -> tuple[str, bytes]:
    data = memoryview(data)
    if len(data) < 2:
        raise TruncatedEnvelope("bus payload shorter than tag length")
    n = int.from_bytes(data[:2], "big")
    if len(data) < 2 + n:
        raise TruncatedEnvelope("bus payload tag truncated")
    tag = bytes(data[2:2 + n]).decode("utf-8")
    return tag, bytes(data[2 + n:])
