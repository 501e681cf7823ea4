"""Codec tests: framing oracle vectors, round-trips, prefix safety."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evbench import codec
from evbench.codec import (
    Connack, Connect, Pingreq, Pingresp, Puback, Publish, Pubrel,
    QosLevel, Suback, Subscribe,
)
from evbench.errors import InvalidPacket, MalformedPacket, UnsupportedProtocolLevel, VarintOutOfRange

from packetgen import random_packet


def oracle_varint(n: int) -> bytes:
    """Independent base-128 little-endian varint with continuation bit."""
    digits = []
    while True:
        digits.append(n % 128)
        n //= 128
        if n == 0:
            break
    return bytes(d | 0x80 for d in digits[:-1]) + bytes([digits[-1]])


class TestRemainingLength:
    def test_zero(self):
        assert codec.encode_remaining_length(0) == b"\x00"

    def test_single_byte_boundary(self):
        assert codec.encode_remaining_length(127) == b"\x7f"

    def test_two_byte(self):
        assert codec.encode_remaining_length(128) == b"\x80\x01"

    @pytest.mark.parametrize("n", [0, 1, 127, 128, 16383, 16384, 2097151, 2097152, 268435455])
    def test_against_oracle(self, n):
        assert codec.encode_remaining_length(n) == oracle_varint(n)

    def test_out_of_range(self):
        with pytest.raises(VarintOutOfRange):
            codec.encode_remaining_length(268435456)
        with pytest.raises(VarintOutOfRange):
            codec.encode_remaining_length(-1)

    def test_decode_zero(self):
        assert codec.decode_remaining_length(b"\x00") == (0, 1)

    def test_decode_round_trip(self):
        assert codec.decode_remaining_length(b"\x80\x01") == (128, 2)

    def test_decode_truncated(self):
        assert codec.decode_remaining_length(b"\xff") is None
        assert codec.decode_remaining_length(b"") is None

    def test_decode_overlong(self):
        with pytest.raises(MalformedPacket):
            codec.decode_remaining_length(b"\xff\xff\xff\xff")

    @given(st.integers(min_value=0, max_value=268435455))
    def test_round_trip_property(self, n):
        enc = codec.encode_remaining_length(n)
        assert codec.decode_remaining_length(enc) == (n, len(enc))
        # canonical: minimal length, no padding
        assert enc == oracle_varint(n)


class TestFramingOracle:
    """Hand-encoded frames per the MQTT 3.1.1 framing rules."""

    def test_pingreq(self):
        assert codec.encode_packet(Pingreq()) == b"\xc0\x00"

    def test_pingresp(self):
        assert codec.encode_packet(Pingresp()) == b"\xd0\x00"

    def test_qos0_publish(self):
        # fixed header 0x30, remaining length 6, topic length 4, "ping"
        frame = codec.encode_packet(Publish(topic="ping", payload=b""))
        assert frame == b"\x30\x06\x00\x04ping"

    def test_puback(self):
        assert codec.encode_packet(Puback(packet_id=1)) == b"\x40\x02\x00\x01"

    def test_pubrel_flags(self):
        assert codec.encode_packet(Pubrel(packet_id=7)) == b"\x62\x02\x00\x07"

    def test_connect_wire(self):
        frame = codec.encode_packet(
            Connect(client_id="vehicle", username="admin", password=b"password",
                    keep_alive=60, clean_session=True)
        )
        body = (
            b"\x00\x04MQTT\x04\xc2\x00\x3c"
            b"\x00\x07vehicle"
            b"\x00\x05admin"
            b"\x00\x08password"
        )
        assert frame == b"\x10" + codec.encode_remaining_length(len(body)) + body

    def test_connack_wire(self):
        assert codec.encode_packet(Connack(session_present=False, return_code=0)) == b"\x20\x02\x00\x00"
        assert codec.encode_packet(Connack(session_present=True, return_code=4)) == b"\x20\x02\x01\x04"

    def test_subscribe_wire(self):
        frame = codec.encode_packet(
            Subscribe(packet_id=10, entries=(("pong", QosLevel.AT_MOST_ONCE),))
        )
        assert frame == b"\x82\x09\x00\x0a\x00\x04pong\x00"


class TestEncodeValidation:
    def test_qos0_with_packet_id(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Publish(topic="t", payload=b"", qos=QosLevel.AT_MOST_ONCE, packet_id=5))

    def test_qos1_without_packet_id(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Publish(topic="t", payload=b"", qos=QosLevel.AT_LEAST_ONCE))

    def test_packet_id_zero(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Puback(packet_id=0))

    def test_wildcard_publish_topic(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Publish(topic="a/+", payload=b""))

    def test_empty_subscribe(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Subscribe(packet_id=1, entries=()))

    def test_password_without_username(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Connect(client_id="x", password=b"secret"))

    def test_oversized_body(self):
        with pytest.raises(InvalidPacket):
            codec.encode_packet(Publish(topic="t", payload=b"\x00" * (codec.MAX_ACCEPTED_FRAME_BODY + 1)))


class TestDecode:
    def test_reserved_type_zero(self):
        with pytest.raises(MalformedPacket):
            codec.decode_packet(b"\x00\x00")

    def test_reserved_type_fifteen(self):
        with pytest.raises(MalformedPacket):
            codec.decode_packet(b"\xf0\x00")

    def test_bad_flags(self):
        with pytest.raises(MalformedPacket):
            codec.decode_packet(b"\xc1\x00")  # pingreq with nonzero flags

    def test_publish_qos3(self):
        with pytest.raises(MalformedPacket):
            codec.decode_packet(b"\x36\x06\x00\x04ping")

    def test_truncation_yields_need_more(self):
        frame = codec.encode_packet(Publish(topic="ping", payload=b"xyz"))
        assert codec.decode_packet(frame[:1]) is None
        assert codec.decode_packet(b"") is None

    def test_trailing_data_ignored(self):
        frame = codec.encode_packet(Pingreq())
        pkt, consumed = codec.decode_packet(frame + b"\xc0\x00")
        assert pkt == Pingreq()
        assert consumed == len(frame)

    def test_invalid_utf8_topic(self):
        # publish frame with raw 0xFF in the topic string
        frame = b"\x30\x05\x00\x03a\xffb"
        with pytest.raises(MalformedPacket):
            codec.decode_packet(frame)

    def test_wildcard_in_publish_topic(self):
        frame = b"\x30\x05\x00\x03a/#"
        with pytest.raises(MalformedPacket):
            codec.decode_packet(frame)

    def test_mqtt5_connect_rejected(self):
        body = b"\x00\x04MQTT\x05\x02\x00\x3c\x00\x01x"
        frame = b"\x10" + codec.encode_remaining_length(len(body)) + body
        with pytest.raises(UnsupportedProtocolLevel):
            codec.decode_packet(frame)

    def test_connect_with_will_rejected(self):
        body = b"\x00\x04MQTT\x04\x06\x00\x3c\x00\x01x\x00\x01w\x00\x01m"
        frame = b"\x10" + codec.encode_remaining_length(len(body)) + body
        with pytest.raises(MalformedPacket):
            codec.decode_packet(frame)

    def test_oversized_frame_rejected(self):
        header = b"\x30" + codec.encode_remaining_length(codec.MAX_ACCEPTED_FRAME_BODY + 1)
        with pytest.raises(MalformedPacket):
            codec.decode_packet(header)


class TestRoundTrip:
    def test_random_packets(self):
        rng = random.Random(0xC0DEC)
        for _ in range(2000):
            pkt = random_packet(rng)
            frame = codec.encode_packet(pkt)
            decoded, consumed = codec.decode_packet(frame)
            assert decoded == pkt
            assert consumed == len(frame)

    def test_prefix_safety_random(self):
        rng = random.Random(0xBEEF)
        for _ in range(300):
            pkt = random_packet(rng)
            frame = codec.encode_packet(pkt)
            for cut in range(len(frame)):
                assert codec.decode_packet(frame[:cut]) is None

    @given(st.binary(min_size=0, max_size=32))
    @settings(max_examples=300)
    def test_garbage_never_crashes(self, data):
        try:
            result = codec.decode_packet(data)
        except MalformedPacket:
            return
        if result is not None:
            pkt, consumed = result
            assert 0 < consumed <= len(data)
            # whatever parsed must re-encode to the consumed bytes
            assert codec.encode_packet(pkt) == bytes(data[:consumed])


class TestValidateTopic:
    def test_plain_name_ok(self):
        assert codec.validate_topic("ping", "name") is None

    def test_hash_not_final(self):
        assert codec.validate_topic("a/#/b", "filter") is not None

    def test_plus_segment_ok(self):
        assert codec.validate_topic("a/+", "filter") is None

    def test_name_rejects_wildcards(self):
        assert codec.validate_topic("a/+/b", "name") is not None
        assert codec.validate_topic("#", "name") is not None

    def test_empty(self):
        assert codec.validate_topic("", "name") is not None

    def test_hash_must_be_whole_segment(self):
        assert codec.validate_topic("a/b#", "filter") is not None

    def test_plus_must_be_whole_segment(self):
        assert codec.validate_topic("a/b+", "filter") is not None

    def test_bare_hash_filter_ok(self):
        assert codec.validate_topic("#", "filter") is None

    def test_too_long(self):
        assert codec.validate_topic("x" * 65536, "name") is not None

    def test_empty_segments_allowed(self):
        # MQTT allows zero-length segments ("a//b", "/a")
        assert codec.validate_topic("/ping", "name") is None
        assert codec.validate_topic("a//b", "name") is None
