"""Desk-scale MQTT pub/sub benchmarking stack.

Provides an embedded MQTT 3.1.1 broker with per-link network emulation, a
client library, an in-process message bus, a bus-to-MQTT bridge with
latency tracing, a synthetic lidar data model, and a scenario harness that
decomposes end-to-end latency into propagation, computation, and
communication shares.
"""

__version__ = "0.1.0"
