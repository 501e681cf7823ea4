"""Minimal in-process publish/subscribe bus.

Delivery hands every subscriber the same message instance (no payload
copies); identity tokens make that checkable.  Each subscription has a
bounded FIFO queue (overflow drops the oldest message and counts it), and
its sink runs sequentially.  Distinct subscriptions are independent: under
the threaded scheduler each runs on its own worker thread, under the
simulated scheduler deliveries are ordered events on the virtual clock.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from typing import Any, Callable

from .envelope import TracingBlock
from .timebase import Scheduler

_identity_counter = itertools.count(1)


class BusMessage:
    """Immutable-by-convention message: topic, type tag, payload, identity."""

    __slots__ = ("topic", "type_tag", "payload", "identity", "trace")

    def __init__(self, topic: str, type_tag: str, payload: Any,
                 trace: TracingBlock | None = None, identity: int | None = None):
        self.topic = topic
        self.type_tag = type_tag
        self.payload = payload
        self.trace = trace
        self.identity = identity if identity is not None else next(_identity_counter)

    def with_trace(self, trace: TracingBlock | None) -> "BusMessage":
        # identity is preserved: the payload is the same message instance
        return BusMessage(self.topic, self.type_tag, self.payload, trace, self.identity)

    def __repr__(self):
        return f"BusMessage(topic={self.topic!r}, type_tag={self.type_tag!r}, identity={self.identity})"


class Subscription:
    def __init__(self, bus: "LocalBus", topic: str, sink: Callable[[BusMessage], None],
                 queue_size: int):
        if queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        self.bus = bus
        self.topic = topic
        self.sink = sink
        self.queue_size = queue_size
        self.drops = 0
        self.delivered = 0
        self._pending: deque[BusMessage] = deque()
        self._lock = threading.Lock()
        self._active = True
        ctx = bus.ctx
        if ctx.is_simulated:
            self._dispatch_scheduled = False
            self._worker = None
        else:
            self._cond = threading.Condition(self._lock)
            self._worker = threading.Thread(
                target=self._worker_loop, name=f"bus-{topic}", daemon=True)
            self._worker.start()

    def unsubscribe(self) -> None:
        self.bus._remove(self)
        with self._lock:
            self._active = False
            if self._worker is not None:
                self._cond.notify()

    # -- delivery --

    def _enqueue(self, msg: BusMessage) -> None:
        with self._lock:
            if not self._active:
                return
            if len(self._pending) >= self.queue_size:
                self._pending.popleft()
                self.drops += 1
            self._pending.append(msg)
            if self._worker is not None:
                self._cond.notify()
                return
            if not self._dispatch_scheduled:
                self._dispatch_scheduled = True
                self.bus.ctx.post(self._drain_one)

    def _drain_one(self) -> None:
        # simulated mode: one sink invocation per event keeps FIFO fairness
        with self._lock:
            if not self._active or not self._pending:
                self._dispatch_scheduled = False
                return
            msg = self._pending.popleft()
            if self._pending:
                self.bus.ctx.post(self._drain_one)
            else:
                self._dispatch_scheduled = False
        self.delivered += 1
        self.sink(msg)

    def _worker_loop(self) -> None:
        while True:
            with self._lock:
                while self._active and not self._pending:
                    self._cond.wait()
                if not self._active:
                    return
                msg = self._pending.popleft()
            self.delivered += 1
            try:
                self.sink(msg)
            except Exception:
                import logging
                logging.getLogger(__name__).exception("bus sink failed on %s", self.topic)


class LocalBus:
    def __init__(self, ctx: Scheduler):
        self.ctx = ctx
        self._subs: dict[str, list[Subscription]] = {}
        self._lock = threading.Lock()

    def subscribe(self, topic: str, sink: Callable[[BusMessage], None],
                  queue_size: int = 100) -> Subscription:
        sub = Subscription(self, topic, sink, queue_size)
        with self._lock:
            self._subs.setdefault(topic, []).append(sub)
        return sub

    def publish(self, topic: str, msg: BusMessage) -> int:
        """Deliver to all current subscribers; returns the delivery count."""
        with self._lock:
            targets = list(self._subs.get(topic, ()))
        for sub in targets:
            sub._enqueue(msg)
        return len(targets)

    def _remove(self, sub: Subscription) -> None:
        with self._lock:
            subs = self._subs.get(sub.topic)
            if subs and sub in subs:
                subs.remove(sub)
