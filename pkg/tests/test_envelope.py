"""Envelope framing round-trips and error paths."""

import pytest

from evbench import envelope
from evbench.envelope import ProbeStamp, TracingBlock
from evbench.errors import BadMagic, TruncatedEnvelope


def test_no_tracing_round_trip():
    data = envelope.encode_envelope(b"abc", None)
    assert len(data) == 5 + 3  # 5-byte header plus payload
    payload, tracing = envelope.decode_envelope(data)
    assert payload == b"abc"
    assert tracing is None


def test_tracing_round_trip_preserves_order():
    block = TracingBlock(sample_id=42).append(1, 1000, 0).append(2, 2000, 1)
    data = envelope.encode_envelope(b"payload", block)
    payload, tracing = envelope.decode_envelope(data)
    assert payload == b"payload"
    assert tracing == block
    assert tracing.probes == (ProbeStamp(1, 1000, 0), ProbeStamp(2, 2000, 1))


def test_tracing_readable_before_payload():
    block = TracingBlock(sample_id=7).append(5, 123, 0)
    big = envelope.encode_envelope(b"\xab" * 100_000, block)
    # decoding a slice that stops right after the tracing block still yields it
    head = big[:5 + 10 + 11]
    payload, tracing = envelope.decode_envelope(head)
    assert tracing.sample_id == 7
    assert payload == b""


def test_bad_magic():
    data = envelope.encode_envelope(b"x", None)
    with pytest.raises(BadMagic):
        envelope.decode_envelope(b"XXXX" + data[4:])


def test_truncated_header():
    with pytest.raises(TruncatedEnvelope):
        envelope.decode_envelope(b"EVB1")
    with pytest.raises(TruncatedEnvelope):
        envelope.decode_envelope(b"EV")


def test_truncated_tracing():
    block = TracingBlock(sample_id=1).append(1, 1, 0)
    data = envelope.encode_envelope(b"", block)
    with pytest.raises(TruncatedEnvelope):
        envelope.decode_envelope(data[:-1])


def test_empty_payload_round_trip():
    data = envelope.encode_envelope(b"", TracingBlock(sample_id=0))
    payload, tracing = envelope.decode_envelope(data)
    assert payload == b""
    assert tracing == TracingBlock(sample_id=0)


def test_bus_payload_pack_unpack():
    data = envelope.pack_bus_payload("compact_scan", b"\x01\x02\x03")
    tag, value = envelope.unpack_bus_payload(data)
    assert tag == "compact_scan"
    assert value == b"\x01\x02\x03"


def test_bus_payload_truncated():
    data = envelope.pack_bus_payload("tag", b"v")
    with pytest.raises(TruncatedEnvelope):
        envelope.unpack_bus_payload(data[:3])
    with pytest.raises(TruncatedEnvelope):
        envelope.unpack_bus_payload(b"\x00")
