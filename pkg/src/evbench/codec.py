"""Bit-exact encoder/decoder for the MQTT 3.1.1 control-packet subset.

Supported packets: CONNECT, CONNACK, PUBLISH, PUBACK, PUBREC, PUBREL,
PUBCOMP, SUBSCRIBE, SUBACK, PINGREQ, PINGRESP, DISCONNECT.  Retained
messages, will messages, UNSUBSCRIBE, and MQTT 5 are outside the subset;
frames using them are rejected.

All functions are pure and operate on byte sequences; there is no shared
state.  Decoders never consume a partial frame: they return ``None``
("need more data") until a complete frame is buffered, and only then
validate and parse it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

from .errors import InvalidPacket, MalformedPacket, UnsupportedProtocolLevel, VarintOutOfRange

MAX_REMAINING_LENGTH = 268_435_455
# Artifact limit, well below the protocol's 256 MB: a 6x expanded point
# cloud (~1.08 MB) passes with wide margin.
MAX_ACCEPTED_FRAME_BODY = 16 * 1024 * 1024

PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4


class QosLevel(IntEnum):
    AT_MOST_ONCE = 0
    AT_LEAST_ONCE = 1
    EXACTLY_ONCE = 2


class PacketType(IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    PUBREC = 5
    PUBREL = 6
    PUBCOMP = 7
    SUBSCRIBE = 8
    SUBACK = 9
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


class ConnectReturnCode(IntEnum):
    ACCEPTED = 0
    UNACCEPTABLE_PROTOCOL = 1
    IDENTIFIER_REJECTED = 2
    SERVER_UNAVAILABLE = 3
    BAD_CREDENTIALS = 4
    NOT_AUTHORIZED = 5


SUBACK_FAILURE = 0x80


@dataclass(frozen=True, slots=True)
class Connect:
    client_id: str
    username: str | None = None
    password: bytes | None = None
    keep_alive: int = 60
    clean_session: bool = True


@dataclass(frozen=True, slots=True)
class Connack:
    session_present: bool
    return_code: int


@dataclass(frozen=True, slots=True)
class Publish:
    topic: str
    payload: bytes
    qos: QosLevel = QosLevel.AT_MOST_ONCE
    packet_id: int | None = None
    dup: bool = False
    retain: bool = False


@dataclass(frozen=True, slots=True)
class Puback:
    packet_id: int


@dataclass(frozen=True, slots=True)
class Pubrec:
    packet_id: int


@dataclass(frozen=True, slots=True)
class Pubrel:
    packet_id: int


@dataclass(frozen=True, slots=True)
class Pubcomp:
    packet_id: int


@dataclass(frozen=True, slots=True)
class Subscribe:
    packet_id: int
    entries: tuple[tuple[str, QosLevel], ...]


@dataclass(frozen=True, slots=True)
class Suback:
    packet_id: int
    granted: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Pingreq:
    pass


@dataclass(frozen=True, slots=True)
class Pingresp:
    pass


@dataclass(frozen=True, slots=True)
class Disconnect:
    pass


ControlPacket = Union[
    Connect, Connack, Publish, Puback, Pubrec, Pubrel, Pubcomp,
    Subscribe, Suback, Pingreq, Pingresp, Disconnect,
]


# --- topic validation & matching -------------------------------------------

def validate_topic(s: str, kind: str) -> str | None:
    """Check a topic name or filter; return the first violated rule, or None.

    ``kind`` is ``"name"`` (no wildcards allowed) or ``"filter"``
    ('#' only as final whole segment, '+' only as a whole segment).
    """
    if kind not in ("name", "filter"):
        raise ValueError(f"kind must be 'name' or 'filter', got {kind!r}")
    if not s:
        return "topic must be nonempty"
    if len(s.encode("utf-8")) > 65535:
        return "encoded topic exceeds 65535 bytes"
    if "\x00" in s:
        return "topic must not contain a null character"
    segments = s.split("/")
    for i, seg in enumerate(segments):
        if kind == "name":
            if "+" in seg or "#" in seg:
                return "wildcards are not allowed in a topic name"
        else:
            if "#" in seg:
                if seg != "#":
                    return "'#' must be a whole segment"
                if i != len(segments) - 1:
                    return "'#' must be the final segment"
            if "+" in seg and seg != "+":
                return "'+' must be a whole segment"
    return None


def ensure_valid_topic(s: str, kind: str) -> None:
    """Raise InvalidPacket if the topic violates its rules."""
    violation = validate_topic(s, kind)
    if violation is not None:
        raise InvalidPacket(f"invalid topic {s!r}: {violation}")


# --- remaining length varint ------------------------------------------------

def encode_remaining_length(n: int) -> bytes:
    """Encode a remaining-length value as the MQTT base-128 varint (1-4 bytes)."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise VarintOutOfRange(f"remaining length {n} outside [0, {MAX_REMAINING_LENGTH}]")
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n > 0:
            byte |= 0x80
        out.append(byte)
        if n == 0:
            return bytes(out)


def decode_remaining_length(buf: bytes | memoryview) -> tuple[int, int] | None:
    """Decode a remaining-length varint.

    Returns (value, bytes consumed), or None if the buffer ends while the
    continuation bit is still set.  Raises MalformedPacket if a 4th byte
    still has the continuation bit set.
    """
    value = 0
    multiplier = 1
    for i in range(min(len(buf), 4)):
        byte = buf[i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        if i == 3:
            raise MalformedPacket("remaining length varint exceeds 4 bytes")
        multiplier *= 128
    return None


# --- field helpers ----------------------------------------------------------

def _encode_string(s: str) -> bytes:
    data = s.encode("utf-8")
    if len(data) > 65535:
        raise InvalidPacket("string field exceeds 65535 bytes")
    return len(data).to_bytes(2, "big") + data


def _encode_binary(data: bytes) -> bytes:
    if len(data) > 65535:
        raise InvalidPacket("binary field exceeds 65535 bytes")
    return len(data).to_bytes(2, "big") + data


class _Reader:
    """Cursor over a complete frame body; underrun means a malformed frame."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: memoryview):
        self.buf = buf
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def u8(self) -> int:
        if self.remaining() < 1:
            raise MalformedPacket("frame body underrun")
        v = self.buf[self.pos]
        self.pos += 1
        return v

    def u16(self) -> int:
        if self.remaining() < 2:
            raise MalformedPacket("frame body underrun")
        v = int.from_bytes(self.buf[self.pos:self.pos + 2], "big")
        self.pos += 2
        return v

    def raw(self, n: int) -> bytes:
        if self.remaining() < n:
            raise MalformedPacket("frame body underrun")
        v = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return v

    def string(self) -> str:
        n = self.u16()
        data = self.raw(n)
        try:
            s = data.decode("utf-8", errors="strict")
        except UnicodeDecodeError as exc:
            raise MalformedPacket(f"invalid UTF-8 string: {exc}") from None
        if "\x00" in s:
            raise MalformedPacket("string contains a null character")
        return s

    def binary(self) -> bytes:
        return self.raw(self.u16())

    def rest(self) -> bytes:
        v = bytes(self.buf[self.pos:])
        self.pos = len(self.buf)
        return v

    def expect_end(self) -> None:
        if self.remaining() != 0:
            raise MalformedPacket("trailing bytes after packet body")


def _require_packet_id(pid: int | None) -> int:
    if pid is None or not 1 <= pid <= 65535:
        raise InvalidPacket(f"packet id must be in [1, 65535], got {pid}")
    return pid


# --- encoding ----------------------------------------------------------------

def _frame(ptype: int, flags: int, body: bytes) -> bytes:
    if len(body) > MAX_ACCEPTED_FRAME_BODY:
        raise InvalidPacket(f"frame body {len(body)} exceeds {MAX_ACCEPTED_FRAME_BODY} bytes")
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def encode_packet(p: ControlPacket) -> bytes:
    """Encode a control packet into a complete MQTT 3.1.1 frame."""
    if isinstance(p, Connect):
        if p.password is not None and p.username is None:
            raise InvalidPacket("password requires a username")
        if not 0 <= p.keep_alive <= 65535:
            raise InvalidPacket(f"keep_alive must fit u16, got {p.keep_alive}")
        flags = 0
        if p.clean_session:
            flags |= 0x02
        if p.username is not None:
            flags |= 0x80
        if p.password is not None:
            flags |= 0x40
        body = bytearray()
        body += _encode_string(PROTOCOL_NAME)
        body.append(PROTOCOL_LEVEL)
        body.append(flags)
        body += p.keep_alive.to_bytes(2, "big")
        body += _encode_string(p.client_id)
        if p.username is not None:
            body += _encode_string(p.username)
        if p.password is not None:
            body += _encode_binary(p.password)
        return _frame(PacketType.CONNECT, 0, bytes(body))

    if isinstance(p, Connack):
        if not 0 <= p.return_code <= 5:
            raise InvalidPacket(f"connack return code must be in [0, 5], got {p.return_code}")
        return _frame(PacketType.CONNACK, 0, bytes([1 if p.session_present else 0, p.return_code]))

    if isinstance(p, Publish):
        qos = QosLevel(p.qos)
        ensure_valid_topic(p.topic, "name")
        if qos == QosLevel.AT_MOST_ONCE:
            if p.packet_id is not None:
                raise InvalidPacket("QoS-0 publish must not carry a packet id")
            if p.dup:
                raise InvalidPacket("QoS-0 publish must not set dup")
        flags = (1 if p.retain else 0) | (qos << 1) | (0x08 if p.dup else 0)
        body = bytearray(_encode_string(p.topic))
        if qos != QosLevel.AT_MOST_ONCE:
            body += _require_packet_id(p.packet_id).to_bytes(2, "big")
        body += p.payload
        return _frame(PacketType.PUBLISH, flags, bytes(body))

    if isinstance(p, Puback):
        return _frame(PacketType.PUBACK, 0, _require_packet_id(p.packet_id).to_bytes(2, "big"))
    if isinstance(p, Pubrec):
        return _frame(PacketType.PUBREC, 0, _require_packet_id(p.packet_id).to_bytes(2, "big"))
    if isinstance(p, Pubrel):
        return _frame(PacketType.PUBREL, 0x02, _require_packet_id(p.packet_id).to_bytes(2, "big"))
    if isinstance(p, Pubcomp):
        return _frame(PacketType.PUBCOMP, 0, _require_packet_id(p.packet_id).to_bytes(2, "big"))

    if isinstance(p, Subscribe):
        if not p.entries:
            raise InvalidPacket("subscribe must carry at least one entry")
        body = bytearray(_require_packet_id(p.packet_id).to_bytes(2, "big"))
        for topic_filter, qos in p.entries:
            ensure_valid_topic(topic_filter, "filter")
            body += _encode_string(topic_filter)
            body.append(QosLevel(qos))
        return _frame(PacketType.SUBSCRIBE, 0x02, bytes(body))

    if isinstance(p, Suback):
        if not p.granted:
            raise InvalidPacket("suback must carry at least one return code")
        body = bytearray(_require_packet_id(p.packet_id).to_bytes(2, "big"))
        for code in p.granted:
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise InvalidPacket(f"invalid suback return code {code:#x}")
            body.append(code)
        return _frame(PacketType.SUBACK, 0, bytes(body))

    if isinstance(p, Pingreq):
        return _frame(PacketType.PINGREQ, 0, b"")
    if isinstance(p, Pingresp):
        return _frame(PacketType.PINGRESP, 0, b"")
    if isinstance(p, Disconnect):
        return _frame(PacketType.DISCONNECT, 0, b"")

    raise InvalidPacket(f"unknown packet object {p!r}")


# --- decoding ----------------------------------------------------------------

_FLAGS_MUST_BE_ZERO = {
    PacketType.CONNECT, PacketType.CONNACK, PacketType.PUBACK,
    PacketType.PUBREC, PacketType.PUBCOMP, PacketType.SUBACK,
    PacketType.PINGREQ, PacketType.PINGRESP, PacketType.DISCONNECT,
}


def decode_packet(buf: bytes | memoryview) -> tuple[ControlPacket, int] | None:
    """Decode the first complete frame in ``buf``.

    Returns (packet, bytes consumed), or None when more data is needed.
    Raises MalformedPacket for byte sequences that can never become a
    valid frame.  A strict prefix of a valid frame always yields None.
    """
    if len(buf) < 1:
        return None
    first = buf[0]
    type_value = first >> 4
    flags = first & 0x0F
    try:
        ptype = PacketType(type_value)
    except ValueError:
        raise MalformedPacket(f"reserved or unsupported packet type {type_value}") from None
    if ptype in _FLAGS_MUST_BE_ZERO and flags != 0:
        raise MalformedPacket(f"{ptype.name} flags must be 0, got {flags:#x}")
    if ptype in (PacketType.PUBREL, PacketType.SUBSCRIBE) and flags != 0x02:
        raise MalformedPacket(f"{ptype.name} flags must be 0x2, got {flags:#x}")
    if ptype == PacketType.PUBLISH:
        if (flags >> 1) & 0x03 == 3:
            raise MalformedPacket("publish qos bits must not be 3")

    rl = decode_remaining_length(memoryview(buf)[1:])
    if rl is None:
        return None
    length, rl_len = rl
    if length > MAX_ACCEPTED_FRAME_BODY:
        raise MalformedPacket(f"frame body {length} exceeds accepted maximum")
    total = 1 + rl_len + length
    if len(buf) < total:
        return None
    body = _Reader(memoryview(buf)[1 + rl_len:total])
    packet = _decode_body(ptype, flags, body)
    return packet, total


def _decode_body(ptype: PacketType, flags: int, r: _Reader) -> ControlPacket:
    if ptype == PacketType.CONNECT:
        return _decode_connect(r)

    if ptype == PacketType.CONNACK:
        ack_flags = r.u8()
        if ack_flags not in (0, 1):
            raise MalformedPacket(f"connack flags byte must be 0 or 1, got {ack_flags}")
        code = r.u8()
        if code > 5:
            raise MalformedPacket(f"unknown connack return code {code}")
        r.expect_end()
        return Connack(session_present=bool(ack_flags), return_code=code)

    if ptype == PacketType.PUBLISH:
        retain = bool(flags & 0x01)
        qos = QosLevel((flags >> 1) & 0x03)
        dup = bool(flags & 0x08)
        if dup and qos == QosLevel.AT_MOST_ONCE:
            raise MalformedPacket("QoS-0 publish must not set dup")
        topic = r.string()
        violation = validate_topic(topic, "name")
        if violation is not None:
            raise MalformedPacket(f"invalid publish topic: {violation}")
        packet_id = None
        if qos != QosLevel.AT_MOST_ONCE:
            packet_id = r.u16()
            if packet_id == 0:
                raise MalformedPacket("publish packet id must not be 0")
        return Publish(topic=topic, payload=r.rest(), qos=qos,
                       packet_id=packet_id, dup=dup, retain=retain)

    if ptype in (PacketType.PUBACK, PacketType.PUBREC, PacketType.PUBREL, PacketType.PUBCOMP):
        pid = r.u16()
        if pid == 0:
            raise MalformedPacket(f"{ptype.name} packet id must not be 0")
        r.expect_end()
        cls = {PacketType.PUBACK: Puback, PacketType.PUBREC: Pubrec,
               PacketType.PUBREL: Pubrel, PacketType.PUBCOMP: Pubcomp}[ptype]
        return cls(packet_id=pid)

    if ptype == PacketType.SUBSCRIBE:
        pid = r.u16()
        if pid == 0:
            raise MalformedPacket("subscribe packet id must not be 0")
        entries = []
        while r.remaining():
            topic_filter = r.string()
            violation = validate_topic(topic_filter, "filter")
            if violation is not None:
                raise MalformedPacket(f"invalid subscribe filter: {violation}")
            qos_byte = r.u8()
            if qos_byte > 2:
                raise MalformedPacket(f"invalid requested qos {qos_byte}")
            entries.append((topic_filter, QosLevel(qos_byte)))
        if not entries:
            raise MalformedPacket("subscribe carries no entries")
        return Subscribe(packet_id=pid, entries=tuple(entries))

    if ptype == PacketType.SUBACK:
        pid = r.u16()
        if pid == 0:
            raise MalformedPacket("suback packet id must not be 0")
        granted = []
        while r.remaining():
            code = r.u8()
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise MalformedPacket(f"invalid suback return code {code:#x}")
            granted.append(code)
        if not granted:
            raise MalformedPacket("suback carries no return codes")
        return Suback(packet_id=pid, granted=tuple(granted))

    # PINGREQ / PINGRESP / DISCONNECT have an empty body.
    r.expect_end()
    if ptype == PacketType.PINGREQ:
        return Pingreq()
    if ptype == PacketType.PINGRESP:
        return Pingresp()
    return Disconnect()


def _decode_connect(r: _Reader) -> Connect:
    name = r.string()
    if name != PROTOCOL_NAME:
        raise MalformedPacket(f"unknown protocol name {name!r}")
    level = r.u8()
    if level != PROTOCOL_LEVEL:
        raise UnsupportedProtocolLevel(f"protocol level {level} not supported (need 4)")
    flags = r.u8()
    if flags & 0x01:
        raise MalformedPacket("connect reserved flag must be 0")
    if flags & 0x04 or flags & 0x18 or flags & 0x20:
        raise MalformedPacket("will messages are not supported by this subset")
    has_password = bool(flags & 0x40)
    has_username = bool(flags & 0x80)
    if has_password and not has_username:
        raise MalformedPacket("password flag requires username flag")
    keep_alive = r.u16()
    client_id = r.string()
    username = r.string() if has_username else None
    password = r.binary() if has_password else None
    r.expect_end()
    return Connect(client_id=client_id, username=username, password=password,
                   keep_alive=keep_alive, clean_session=bool(flags & 0x02))


def packet_type_name(p: ControlPacket) -> str:
    """Wire-level name of a packet object (for structured logs)."""
    return type(p).__name__.upper()
