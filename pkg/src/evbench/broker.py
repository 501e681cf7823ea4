"""Embedded MQTT 3.1.1 broker core.

Transport-agnostic: connections are attached through a small ``wire``
interface (see transport.py), so the same core serves real TCP/TLS sockets
and in-memory simulated links.  Link emulation is applied inside the wire
layer; the core binds a shaper to a wire once the CONNECT names a
client_id that has one configured.

QoS semantics:

* QoS 1: PUBLISH is routed and acknowledged on receipt.  A retransmitted
  inbound publish (dup=1) is routed again, and that dup flag is propagated
  to subscribers so duplicates are observable downstream.
* QoS 2: PUBLISH is stored and PUBREC'd on receipt; the message is routed
  exactly once, when PUBREL arrives (store-and-forward).  Duplicate
  PUBLISHes for a stored id are PUBREC'd without a second store; PUBREL
  for an unknown id is answered with PUBCOMP and routes nothing, so
  retransmitted PUBRELs are harmless.

Inbound QoS>=1 PUBLISH and PUBREL processing is charged a small
configurable bookkeeping delay (store cost), mirroring the persistence
work a production broker performs for acknowledged deliveries.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import codec
from .codec import (
    Connack, Connect, ConnectReturnCode, Disconnect, Pingreq, Pingresp,
    Puback, Pubcomp, Publish, Pubrec, Pubrel, QosLevel, Suback, Subscribe,
)
from .errors import ProtocolViolation
from .shaper import ShaperConfig, ShaperPair
from .timebase import MS, Scheduler

log = logging.getLogger(__name__)


def topic_matches(topic_filter: str, topic_name: str) -> bool:
    """Standard MQTT segment matching: '+' is one segment, '#' the remainder."""
    fsegs = topic_filter.split("/")
    tsegs = topic_name.split("/")
    for i, seg in enumerate(fsegs):
        if seg == "#":
            return True
        if i >= len(tsegs):
            return False
        if seg == "+":
            continue
        if seg != tsegs[i]:
            return False
    return len(fsegs) == len(tsegs)


class CredentialRegistry:
    """Username to salted-hash map; constant-time verification."""

    def __init__(self):
        self._entries: dict[str, tuple[bytes, bytes]] = {}

    def add(self, username: str, password: str) -> None:
        salt = os.urandom(16)
        self._entries[username] = (salt, self._digest(salt, password))

    def verify(self, username: str | None, password: bytes | None) -> bool:
        if username is None or username not in self._entries:
            return False
        salt, expected = self._entries[username]
        supplied = self._digest(salt, (password or b"").decode("utf-8", "surrogateescape"))
        return hashlib.sha256(expected).digest() == hashlib.sha256(supplied).digest()

    @staticmethod
    def _digest(salt: bytes, password: str) -> bytes:
        return hashlib.sha256(salt + password.encode("utf-8", "surrogateescape")).digest()

    def __len__(self):
        return len(self._entries)


@dataclass
class BrokerOptions:
    credentials: CredentialRegistry | None = None
    shapers: dict[str, ShaperConfig] = field(default_factory=dict)
    # store/bookkeeping cost charged to inbound QoS>=1 PUBLISH and PUBREL
    qos_processing_delay_ms: float = 0.5
    retransmit_initial_ms: float = 1000.0
    retransmit_max_attempts: int = 3
    keepalive_grace: float = 1.5
    packet_log: Optional[Callable[[str, str, int, str], None]] = None


# outbound in-flight states
AWAIT_PUBACK = "AwaitPuback"
AWAIT_PUBREC = "AwaitPubrec"
AWAIT_PUBCOMP = "AwaitPubcomp"


class _Inflight:
    __slots__ = ("publish", "state", "attempts", "timeout_ms", "timer")

    def __init__(self, publish: Publish, state: str):
        self.publish = publish
        self.state = state
        self.attempts = 1
        self.timeout_ms = 0.0
        self.timer = None


class Session:
    """Per-client broker state."""

    def __init__(self, client_id: str, clean_session: bool):
        self.client_id = client_id
        self.clean_session = clean_session
        self.subscriptions: list[tuple[str, QosLevel]] = []
        # inbound exactly-once: packet_id -> stored publish awaiting PUBREL
        self.inbound_qos2: dict[int, Publish] = {}
        self.outbound_inflight: dict[int, _Inflight] = {}
        self.next_packet_id = 1
        self.pending_out: list[tuple[Publish, QosLevel, bool]] = []
        self.connection: "BrokerConnection | None" = None

    def granted_qos_for(self, topic: str) -> QosLevel | None:
        best: QosLevel | None = None
        for topic_filter, qos in self.subscriptions:
            if topic_matches(topic_filter, topic):
                if best is None or qos > best:
                    best = qos
        return best

    def alloc_packet_id(self) -> int | None:
        if len(self.outbound_inflight) >= 65535:
            return None
        pid = self.next_packet_id
        while pid in self.outbound_inflight:
            pid = pid % 65535 + 1
        self.next_packet_id = pid % 65535 + 1
        return pid


class BrokerConnection:
    """Glue between one wire and the core: decode, dispatch, keep-alive."""

    def __init__(self, core: "BrokerCore", wire):
        self.core = core
        self.wire = wire
        self.session: Session | None = None
        self.client_id: str | None = None
        self.keep_alive = 0
        self.last_activity = core.ctx.now_ns()
        self._keepalive_timer = None
        self.closed = False
        wire.on_frame = self.on_frame
        wire.on_close = self._on_wire_close

    # -- inbound --

    def on_frame(self, frame: bytes) -> None:
        with self.core._lock:
            if self.closed:
                return
            self.last_activity = self.core.ctx.now_ns()
            try:
                decoded = codec.decode_packet(frame)
            except codec.MalformedPacket if False else Exception as exc:  # narrowed below
                self._reject_frame(exc)
                return
            if decoded is None:
                self.close("truncated frame")
                return
            pkt, _ = decoded
            self.core._log_packet(self.client_id, pkt, "in")
            delay_ms = self.core.options.qos_processing_delay_ms
            needs_store = (isinstance(pkt, Publish) and pkt.qos != QosLevel.AT_MOST_ONCE) \
                or isinstance(pkt, Pubrel)
            if needs_store and delay_ms > 0:
                self.core.ctx.call_later(int(delay_ms * MS), self._dispatch, pkt)
            else:
                self._dispatch(pkt)

    def _reject_frame(self, exc: Exception) -> None:
        from .errors import MalformedPacket, UnsupportedProtocolLevel
        if isinstance(exc, UnsupportedProtocolLevel):
            self.send_packet(Connack(session_present=False,
                                     return_code=ConnectReturnCode.UNACCEPTABLE_PROTOCOL))
            self.close("unsupported protocol level")
        elif isinstance(exc, MalformedPacket):
            self.close(f"malformed frame: {exc}")
        else:
            log.exception("unexpected decode failure")
            self.close("decode failure")

    def _dispatch(self, pkt) -> None:
        with self.core._lock:
            if self.closed:
                return
            try:
                self.core.handle_packet(self, pkt)
            except ProtocolViolation as exc:
                self.close(f"protocol violation: {exc}")

    # -- outbound --

    def send_packet(self, pkt, droppable: bool = False) -> None:
        if self.closed:
            return
        self.core._log_packet(self.client_id, pkt, "out")
        self.wire.send(codec.encode_packet(pkt), droppable=droppable)

    # -- lifecycle --

    def arm_keepalive(self) -> None:
        if self.keep_alive <= 0:
            return
        grace_ns = int(self.keep_alive * self.core.options.keepalive_grace * 1e9)
        self._keepalive_timer = self.core.ctx.call_later(grace_ns, self._keepalive_check, grace_ns)

    def _keepalive_check(self, grace_ns: int) -> None:
        with self.core._lock:
            if self.closed:
                return
            idle = self.core.ctx.now_ns() - self.last_activity
            if idle >= grace_ns:
                self.close("keep-alive expired")
            else:
                self._keepalive_timer = self.core.ctx.call_at(
                    self.last_activity + grace_ns, self._keepalive_check, grace_ns)

    def close(self, reason: str = "") -> None:
        with self.core._lock:
            if self.closed:
                return
            self.closed = True
            if self._keepalive_timer is not None:
                self._keepalive_timer.cancel()
            self.core._connection_closed(self, reason)
            self.wire.close()

    def _on_wire_close(self) -> None:
        self.close("transport closed")


class BrokerCore:
    """Routing core shared by all connections."""

    def __init__(self, ctx: Scheduler, options: BrokerOptions | None = None):
        self.ctx = ctx
        self.options = options or BrokerOptions()
        self.sessions: dict[str, Session] = {}
        self._lock = threading.RLock()

    # -- transport entry --

    def connection_made(self, wire) -> BrokerConnection:
        return BrokerConnection(self, wire)

    # -- packet dispatch --

    def handle_packet(self, conn: BrokerConnection, pkt) -> None:
        if conn.session is None:
            if not isinstance(pkt, Connect):
                raise ProtocolViolation("first packet must be CONNECT")
            self.handle_connect(conn, pkt)
            return
        if isinstance(pkt, Connect):
            raise ProtocolViolation("second CONNECT on one connection")
        if isinstance(pkt, Pingreq):
            conn.send_packet(Pingresp())
            return
        if isinstance(pkt, Disconnect):
            conn.close("client disconnect")
            return
        if isinstance(pkt, Subscribe):
            self._handle_subscribe(conn.session, pkt)
            return
        if isinstance(pkt, (Publish, Puback, Pubrec, Pubrel, Pubcomp)):
            responses = self.step_qos(conn.session, pkt)
            for response in responses:
                conn.send_packet(response)
            return
        raise ProtocolViolation(f"unexpected packet {codec.packet_type_name(pkt)}")

    # -- connect / auth --

    def handle_connect(self, conn: BrokerConnection, pkt: Connect) -> Connack:
        """Authenticate and bind a session; returns the CONNACK sent."""
        code = self._auth_code(pkt)
        if code != ConnectReturnCode.ACCEPTED:
            ack = Connack(session_present=False, return_code=code)
            conn.send_packet(ack)
            conn.close(f"connect refused ({code})")
            return ack

        shaper_cfg = self.options.shapers.get(pkt.client_id)
        if shaper_cfg is not None and not shaper_cfg.is_noop():
            conn.wire.set_shaper(ShaperPair(shaper_cfg))

        existing = self.sessions.get(pkt.client_id)
        session_present = False
        if existing is not None:
            if existing.connection is not None:
                # duplicate client_id evicts the older connection
                old = existing.connection
                existing.connection = None
                old.close("session takeover")
            if pkt.clean_session:
                self._destroy_session(existing)
            else:
                session_present = True

        if session_present:
            session = self.sessions[pkt.client_id]
        else:
            session = Session(pkt.client_id, pkt.clean_session)
            self.sessions[pkt.client_id] = session

        session.connection = conn
        conn.session = session
        conn.client_id = pkt.client_id
        conn.keep_alive = pkt.keep_alive
        ack = Connack(session_present=session_present, return_code=ConnectReturnCode.ACCEPTED)
        conn.send_packet(ack)
        conn.arm_keepalive()
        if session_present:
            self._resume_session(session)
        return ack

    def _auth_code(self, pkt: Connect) -> int:
        if not pkt.client_id:
            return ConnectReturnCode.IDENTIFIER_REJECTED
        registry = self.options.credentials
        if registry is None:
            return ConnectReturnCode.ACCEPTED
        if pkt.username is None:
            return ConnectReturnCode.NOT_AUTHORIZED
        if not registry.verify(pkt.username, pkt.password):
            return ConnectReturnCode.BAD_CREDENTIALS
        return ConnectReturnCode.ACCEPTED

    # -- subscribe --

    def _handle_subscribe(self, session: Session, pkt: Subscribe) -> None:
        granted = []
        for topic_filter, qos in pkt.entries:
            session.subscriptions = [
                (f, q) for f, q in session.subscriptions if f != topic_filter
            ]
            session.subscriptions.append((topic_filter, qos))
            granted.append(int(qos))
        session.connection.send_packet(Suback(packet_id=pkt.packet_id, granted=tuple(granted)))

    # -- QoS state machines --

    def step_qos(self, session: Session, pkt) -> list:
        """Advance the QoS state machines; returns response packets.

        Routing of application messages happens as a side effect.  Raises
        ProtocolViolation for acknowledgements that do not match any
        outbound in-flight state.
        """
        if isinstance(pkt, Publish):
            if pkt.retain:
                raise ProtocolViolation("retained messages are not supported")
            if pkt.qos == QosLevel.AT_MOST_ONCE:
                self.route_publish(pkt, session)
                return []
            if pkt.qos == QosLevel.AT_LEAST_ONCE:
                self.route_publish(pkt, session)
                return [Puback(packet_id=pkt.packet_id)]
            # exactly-once: store now, route on PUBREL
            if pkt.packet_id not in session.inbound_qos2:
                session.inbound_qos2[pkt.packet_id] = pkt
            return [Pubrec(packet_id=pkt.packet_id)]

        if isinstance(pkt, Pubrel):
            stored = session.inbound_qos2.pop(pkt.packet_id, None)
            if stored is not None:
                self.route_publish(stored, session)
            # PUBCOMP is always sent so retransmitted PUBRELs converge
            return [Pubcomp(packet_id=pkt.packet_id)]

        if isinstance(pkt, Puback):
            inflight = session.outbound_inflight.get(pkt.packet_id)
            if inflight is None or inflight.state != AWAIT_PUBACK:
                raise ProtocolViolation(f"PUBACK for unknown id {pkt.packet_id}")
            self._complete_outbound(session, pkt.packet_id)
            return []

        if isinstance(pkt, Pubrec):
            inflight = session.outbound_inflight.get(pkt.packet_id)
            if inflight is None:
                raise ProtocolViolation(f"PUBREC for unknown id {pkt.packet_id}")
            if inflight.state == AWAIT_PUBCOMP:
                return [Pubrel(packet_id=pkt.packet_id)]  # duplicate PUBREC
            if inflight.state != AWAIT_PUBREC:
                raise ProtocolViolation(f"PUBREC in state {inflight.state}")
            inflight.state = AWAIT_PUBCOMP
            self._arm_retransmit(session, pkt.packet_id, restart=True)
            return [Pubrel(packet_id=pkt.packet_id)]

        if isinstance(pkt, Pubcomp):
            inflight = session.outbound_inflight.get(pkt.packet_id)
            if inflight is None or inflight.state != AWAIT_PUBCOMP:
                raise ProtocolViolation(f"PUBCOMP for unknown id {pkt.packet_id}")
            self._complete_outbound(session, pkt.packet_id)
            return []

        raise ProtocolViolation(f"packet {codec.packet_type_name(pkt)} outside QoS flow")

    # -- routing --

    def route_publish(self, pkt: Publish, origin: Session | None) -> list[tuple[Session, QosLevel]]:
        """Fan a publish out to matching subscribers.

        Returns (session, effective_qos) per scheduled delivery; the dup
        flag of QoS-1 retransmissions is propagated to subscribers.
        """
        deliveries = []
        for session in list(self.sessions.values()):
            granted = session.granted_qos_for(pkt.topic)
            if granted is None:
                continue
            effective = min(QosLevel(pkt.qos), granted)
            dup = bool(pkt.dup) and pkt.qos == QosLevel.AT_LEAST_ONCE
            self._deliver(session, pkt, effective, dup)
            deliveries.append((session, effective))
        return deliveries

    def _deliver(self, session: Session, pkt: Publish, effective: QosLevel, dup: bool) -> None:
        if effective == QosLevel.AT_MOST_ONCE:
            if session.connection is not None:
                out = Publish(topic=pkt.topic, payload=pkt.payload, qos=QosLevel.AT_MOST_ONCE)
                session.connection.send_packet(out, droppable=True)
            return
        if session.connection is None:
            session.pending_out.append((pkt, effective, dup))
            return
        pid = session.alloc_packet_id()
        if pid is None:
            session.pending_out.append((pkt, effective, dup))
            return
        out = Publish(topic=pkt.topic, payload=pkt.payload, qos=effective,
                      packet_id=pid, dup=dup)
        state = AWAIT_PUBACK if effective == QosLevel.AT_LEAST_ONCE else AWAIT_PUBREC
        session.outbound_inflight[pid] = _Inflight(out, state)
        session.connection.send_packet(out)
        self._arm_retransmit(session, pid, restart=True)

    def _complete_outbound(self, session: Session, pid: int) -> None:
        inflight = session.outbound_inflight.pop(pid, None)
        if inflight is not None and inflight.timer is not None:
            inflight.timer.cancel()
        while session.pending_out and len(session.outbound_inflight) < 65535:
            pkt, effective, dup = session.pending_out.pop(0)
            self._deliver(session, pkt, effective, dup)

    # -- retransmission --

    def _arm_retransmit(self, session: Session, pid: int, restart: bool) -> None:
        inflight = session.outbound_inflight.get(pid)
        if inflight is None:
            return
        if inflight.timer is not None:
            inflight.timer.cancel()
        if restart:
            inflight.timeout_ms = self.options.retransmit_initial_ms
        inflight.timer = self.ctx.call_later(
            int(inflight.timeout_ms * MS), self._retransmit, session, pid)

    def _retransmit(self, session: Session, pid: int) -> None:
        with self._lock:
            inflight = session.outbound_inflight.get(pid)
            if inflight is None or session.connection is None:
                return
            if inflight.attempts >= self.options.retransmit_max_attempts:
                session.connection.close("retransmission budget exhausted")
                return
            inflight.attempts += 1
            inflight.timeout_ms *= 2
            if inflight.state == AWAIT_PUBCOMP:
                session.connection.send_packet(Pubrel(packet_id=pid))
            else:
                resend = Publish(topic=inflight.publish.topic,
                                 payload=inflight.publish.payload,
                                 qos=inflight.publish.qos, packet_id=pid, dup=True)
                session.connection.send_packet(resend)
            self._arm_retransmit(session, pid, restart=False)

    # -- session lifecycle --

    def _resume_session(self, session: Session) -> None:
        for pid, inflight in list(session.outbound_inflight.items()):
            if inflight.state == AWAIT_PUBCOMP:
                session.connection.send_packet(Pubrel(packet_id=pid))
            else:
                resend = Publish(topic=inflight.publish.topic,
                                 payload=inflight.publish.payload,
                                 qos=inflight.publish.qos, packet_id=pid, dup=True)
                session.connection.send_packet(resend)
            inflight.attempts = 1
            self._arm_retransmit(session, pid, restart=True)
        pending, session.pending_out = session.pending_out, []
        for pkt, effective, dup in pending:
            self._deliver(session, pkt, effective, dup)

    def _destroy_session(self, session: Session) -> None:
        for inflight in session.outbound_inflight.values():
            if inflight.timer is not None:
                inflight.timer.cancel()
        self.sessions.pop(session.client_id, None)

    def _connection_closed(self, conn: BrokerConnection, reason: str) -> None:
        session = conn.session
        conn.session = None
        if session is None or session.connection is not conn:
            return
        session.connection = None
        for inflight in session.outbound_inflight.values():
            if inflight.timer is not None:
                inflight.timer.cancel()
                inflight.timer = None
        if session.clean_session:
            self._destroy_session(session)
        if reason and reason not in ("client disconnect",):
            log.debug("connection %s closed: %s", session.client_id, reason)

    # -- logging --

    def _log_packet(self, client_id: str | None, pkt, direction: str) -> None:
        fn = self.options.packet_log
        if fn is not None:
            fn(client_id or "?", codec.packet_type_name(pkt), self.ctx.now_ns(), direction)
