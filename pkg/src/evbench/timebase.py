"""Execution contexts: a deterministic virtual-time loop and a threaded
real-time scheduler.

Every component in the package is written against the small ``Scheduler``
interface so the same broker/client/bridge code runs either single-threaded
under a virtual clock (deterministic tests and benches) or on real threads
and sockets.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Any, Callable

log = logging.getLogger(__name__)

MS = 1_000_000  # nanoseconds per millisecond
SECOND = 1_000_000_000


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    """Interface shared by SimScheduler and ThreadedScheduler."""

    is_simulated: bool

    def now_ns(self) -> int:
        raise NotImplementedError

    def call_at(self, t_ns: int, fn: Callable, *args: Any) -> TimerHandle:
        raise NotImplementedError

    def call_later(self, delay_ns: int, fn: Callable, *args: Any) -> TimerHandle:
        return self.call_at(self.now_ns() + max(0, delay_ns), fn, *args)

    def post(self, fn: Callable, *args: Any) -> TimerHandle:
        """Run ``fn`` as soon as possible, after already-queued work at this time."""
        return self.call_at(self.now_ns(), fn, *args)


class SimScheduler(Scheduler):
    """Single-threaded event loop over a virtual clock.

    Events fire in (time, insertion order); callbacks run on the caller's
    thread inside the ``run_*`` methods.  With seeded randomness everywhere
    else, a run is fully deterministic.
    """

    is_simulated = True

    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._heap: list[tuple[int, int, TimerHandle, Callable, tuple]] = []
        self._seq = itertools.count()

    def now_ns(self) -> int:
        return self._now

    def call_at(self, t_ns: int, fn: Callable, *args: Any) -> TimerHandle:
        handle = TimerHandle()
        heapq.heappush(self._heap, (max(t_ns, self._now), next(self._seq), handle, fn, args))
        return handle

    def _pop_due(self, limit_ns: int | None) -> tuple | None:
        while self._heap:
            t, _, handle, fn, args = self._heap[0]
            if limit_ns is not None and t > limit_ns:
                return None
            heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            return t, fn, args
        return None

    def run_until(self, pred: Callable[[], bool] | None = None,
                  deadline_ns: int | None = None) -> bool:
        """Process events in order until ``pred`` is true or events run out.

        ``deadline_ns`` bounds virtual time (events beyond it stay queued,
        the clock advances to the deadline).  Returns True if ``pred``
        became true.
        """
        if pred is not None and pred():
            return True
        while True:
            item = self._pop_due(deadline_ns)
            if item is None:
                if deadline_ns is not None:
                    self._now = max(self._now, deadline_ns)
                return pred is not None and pred()
            t, fn, args = item
            self._now = t
            fn(*args)
            if pred is not None and pred():
                return True

    def run_for(self, duration_ns: int) -> None:
        self.run_until(pred=None, deadline_ns=self._now + duration_ns)

    def run_until_idle(self) -> None:
        self.run_until(pred=None, deadline_ns=None)

    def pending(self) -> int:
        return sum(1 for _, _, h, _, _ in self._heap if not h.cancelled)


class ThreadedScheduler(Scheduler):
    """Timer wheel on a daemon thread over the monotonic clock.

    Callbacks run on the scheduler thread and must be short; long work
    belongs on component worker threads.
    """

    is_simulated = False

    def __init__(self, name: str = "evbench-timer"):
        self._heap: list[tuple[int, int, TimerHandle, Callable, tuple]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._loop, name=name, daemon=True)
        self._thread.start()

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def call_at(self, t_ns: int, fn: Callable, *args: Any) -> TimerHandle:
        handle = TimerHandle()
        with self._cond:
            if self._stopped:
                handle.cancel()
                return handle
            heapq.heappush(self._heap, (t_ns, next(self._seq), handle, fn, args))
            self._cond.notify()
        return handle

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._heap.clear()
            self._cond.notify()
        if self._thread is not threading.current_thread():
            self._thread.join(timeout=2.0)

    def _loop(self) -> None:
        while True:
            with self._cond:
                if self._stopped:
                    return
                if not self._heap:
                    self._cond.wait()
                    continue
                t, _, handle, fn, args = self._heap[0]
                now = time.monotonic_ns()
                if t > now:
                    self._cond.wait(timeout=(t - now) / SECOND)
                    continue
                heapq.heappop(self._heap)
                if handle.cancelled:
                    continue
            try:
                fn(*args)
            except Exception:
                log.exception("timer callback failed")


class HostClock:
    """Per-host timestamp source: scheduler time plus a fixed offset.

    Models unsynchronized host clocks; analysis code must never subtract
    timestamps across different ``clock_id`` values.
    """

    __slots__ = ("ctx", "clock_id", "offset_ns")

    def __init__(self, ctx: Scheduler, clock_id: int, offset_ns: int = 0):
        self.ctx = ctx
        self.clock_id = clock_id
        self.offset_ns = offset_ns

    def now_ns(self) -> int:
        return self.ctx.now_ns() + self.offset_ns


def busy_wait_ns(duration_ns: int) -> None:
    """Spin the CPU for the given duration (compute-load stand-in)."""
    deadline = time.perf_counter_ns() + duration_ns
    while time.perf_counter_ns() < deadline:
        pass
