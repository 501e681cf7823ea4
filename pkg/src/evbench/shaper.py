"""Per-link network-condition emulation: delay, jitter, bandwidth, loss.

A link direction is a FIFO pipe with a serializer: a frame must wait for
the previous frame's serialization to finish, then occupies the serializer
for ``len/bandwidth`` seconds, then propagates for ``delay + jitter``.
Delivery times per direction are forced non-decreasing.  Loss applies only
to frames the sender marks droppable (QoS-0 application publishes).
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .timebase import MS, SECOND


@dataclass(frozen=True)
class ShaperConfig:
    one_way_delay_ms: float = 0.0
    jitter_stddev_ms: float = 0.0
    bandwidth_bytes_per_s: float = 0.0  # 0 = unlimited
    drop_probability: float = 0.0       # QoS-0 application publishes only
    seed: int = 0

    def __post_init__(self):
        if self.one_way_delay_ms < 0:
            raise ValueError("one_way_delay_ms must be >= 0")
        if self.jitter_stddev_ms < 0:
            raise ValueError("jitter_stddev_ms must be >= 0")
        if self.bandwidth_bytes_per_s < 0:
            raise ValueError("bandwidth_bytes_per_s must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")

    def is_noop(self) -> bool:
        return (self.one_way_delay_ms == 0 and self.jitter_stddev_ms == 0
                and self.bandwidth_bytes_per_s == 0 and self.drop_probability == 0)


class LinkShaper:
    """One direction of an emulated link."""

    def __init__(self, config: ShaperConfig, seed: int):
        self.config = config
        self._rng = random.Random(seed)
        self._serializer_free_at = 0
        self._last_delivery = 0

    def plan(self, now_ns: int, frame_len: int, droppable: bool = False) -> int | None:
        """Return the delivery timestamp for a frame sent now, or None if dropped."""
        cfg = self.config
        if droppable and cfg.drop_probability > 0.0:
            if self._rng.random() < cfg.drop_probability:
                return None
        start = max(now_ns, self._serializer_free_at)
        if cfg.bandwidth_bytes_per_s > 0:
            serialization = int(frame_len * SECOND / cfg.bandwidth_bytes_per_s)
        else:
            serialization = 0
        self._serializer_free_at = start + serialization
        delay_ms = cfg.one_way_delay_ms
        if cfg.jitter_stddev_ms > 0:
            delay_ms = self._rng.gauss(cfg.one_way_delay_ms, cfg.jitter_stddev_ms)
        delay_ns = max(0, int(delay_ms * MS))
        t = start + serialization + delay_ns
        # FIFO per link: jitter must not reorder frames.
        t = max(t, self._last_delivery)
        self._last_delivery = t
        return t


class ShaperPair:
    """Both directions of a client link, with independent seeded streams."""

    def __init__(self, config: ShaperConfig):
        self.config = config
        self.inbound = LinkShaper(config, seed=config.seed * 2 + 1)
        self.outbound = LinkShaper(config, seed=config.seed * 2 + 2)
