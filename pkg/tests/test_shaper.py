"""Shaper arithmetic, FIFO, determinism, and loss-rate statistics."""

import math

import pytest

from evbench.shaper import LinkShaper, ShaperConfig
from evbench.timebase import MS


def test_pure_delay():
    s = LinkShaper(ShaperConfig(one_way_delay_ms=19.0), seed=1)
    assert s.plan(0, 1000) == 19 * MS


def test_serialization_time():
    # 1e6 bytes over 1e7 B/s on an idle link: 100 ms
    s = LinkShaper(ShaperConfig(bandwidth_bytes_per_s=1e7), seed=1)
    assert s.plan(0, 1_000_000) == 100 * MS


def test_certain_drop():
    s = LinkShaper(ShaperConfig(drop_probability=1.0), seed=1)
    assert s.plan(0, 100, droppable=True) is None


def test_drop_only_applies_to_droppable():
    s = LinkShaper(ShaperConfig(drop_probability=1.0), seed=1)
    assert s.plan(0, 100, droppable=False) is not None


def test_serializer_queueing():
    # two 1 MB frames sent back to back: second waits for the first
    s = LinkShaper(ShaperConfig(bandwidth_bytes_per_s=1e7), seed=1)
    assert s.plan(0, 1_000_000) == 100 * MS
    assert s.plan(0, 1_000_000) == 200 * MS
    # idle gap resets the queue reference point
    assert s.plan(500 * MS, 1_000_000) == 600 * MS


def test_fifo_under_jitter():
    s = LinkShaper(ShaperConfig(one_way_delay_ms=5.0, jitter_stddev_ms=3.0), seed=42)
    last = 0
    for i in range(5000):
        t = s.plan(i * 10_000, 100)
        assert t >= last
        last = t


def test_seeded_determinism():
    cfg = ShaperConfig(one_way_delay_ms=10.0, jitter_stddev_ms=2.0,
                       bandwidth_bytes_per_s=1e6, drop_probability=0.1, seed=7)
    a = LinkShaper(cfg, seed=99)
    b = LinkShaper(cfg, seed=99)
    sched_a = [a.plan(i * 1_000_000, 512, droppable=(i % 3 == 0)) for i in range(2000)]
    sched_b = [b.plan(i * 1_000_000, 512, droppable=(i % 3 == 0)) for i in range(2000)]
    assert sched_a == sched_b


def test_jitter_never_negative_delay():
    s = LinkShaper(ShaperConfig(one_way_delay_ms=0.5, jitter_stddev_ms=5.0), seed=3)
    for i in range(2000):
        t = s.plan(i * 100 * MS, 10)
        assert t >= i * 100 * MS


def test_loss_rate_within_binomial_bounds():
    p = 0.2
    n = 5000
    s = LinkShaper(ShaperConfig(drop_probability=p), seed=11)
    delivered = sum(1 for _ in range(n) if s.plan(0, 10, droppable=True) is not None)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(delivered - n * (1 - p)) <= 3 * sigma


def test_config_validation():
    with pytest.raises(ValueError):
        ShaperConfig(one_way_delay_ms=-1)
    with pytest.raises(ValueError):
        ShaperConfig(drop_probability=1.5)
