"""Exception types shared across the package."""


class EvbenchError(Exception):
    """Base class for all package-specific errors."""


# --- codec ---

class CodecError(EvbenchError):
    """Base class for wire-format errors."""


class MalformedPacket(CodecError):
    """A received byte sequence cannot be a valid frame."""


class UnsupportedProtocolLevel(MalformedPacket):
    """CONNECT carried a protocol level other than 4 (MQTT 3.1.1)."""


class InvalidPacket(CodecError):
    """A packet violates its invariants and cannot be encoded."""


class VarintOutOfRange(CodecError):
    """Value exceeds the 4-byte remaining-length maximum."""


# --- envelope ---

class EnvelopeError(EvbenchError):
    """Base class for bridge envelope errors."""


class BadMagic(EnvelopeError):
    """Envelope does not start with the expected magic bytes."""


class TruncatedEnvelope(EnvelopeError):
    """Envelope ends before its declared contents."""


# --- configuration ---

class ConfigError(EvbenchError):
    """Base class for configuration errors."""


class ParseError(ConfigError):
    """Config text could not be parsed; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(ConfigError):
    """Config parsed but violates a constraint; names the offending rule."""


# --- broker / client ---

class ProtocolViolation(EvbenchError):
    """Peer sent a packet that is illegal in the current session state."""


class AuthFailure(EvbenchError):
    """Broker refused the CONNECT credentials; not retryable."""

    def __init__(self, return_code: int):
        super().__init__(f"connection refused, return code {return_code}")
        self.return_code = return_code


class NotConnected(EvbenchError):
    """Operation requires an established connection."""


class SubscriptionRefused(EvbenchError):
    """Broker returned failure (0x80) in SUBACK."""


class BufferOverflow(EvbenchError):
    """Outbound buffer full while disconnected."""


class PublishTimeout(EvbenchError):
    """Retransmission budget exhausted without acknowledgement."""


# --- harness ---

class EmptySeries(EvbenchError):
    """Statistics requested over an empty value series."""


class MissingProbe(EvbenchError):
    """A sample lacks a probe required by the configured topology."""


class ClockViolation(EvbenchError):
    """A latency partial would subtract timestamps from different clocks."""


class ScenarioAborted(EvbenchError):
    """Scenario could not produce a trustworthy report."""

    def __init__(self, cause: str):
        super().__init__(cause)
        self.cause = cause
