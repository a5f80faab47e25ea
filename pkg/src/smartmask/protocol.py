"""Binary framing for device <-> application traffic.

Frame layout (all multi-byte fields little-endian):

    magic   2B  0xA5 0x5A
    version 1B  = 1
    type    1B  message type
    flags   1B  bit 0 = payload encrypted
    seq     2B  u16
    len     2B  u16 payload length (<= 1024)
    payload     len bytes
    crc32   4B  CRC-32 (reflected, poly 0x04C11DB7) over all preceding bytes

When a session key is present the payload is sealed with ChaCha20-Poly1305
(the 9-byte header is authenticated as associated data) and carried as
12-byte nonce || ciphertext+tag.  Nonces come from a per-session monotonic
counter and are never reused.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, fields

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

MAGIC = b"\xa5\x5a"
VERSION = 1
HEADER_LEN = 9
CRC_LEN = 4
MAX_PAYLOAD = 1024
NONCE_LEN = 12

# message types
MSG_TELEMETRY = 1
MSG_STATUS = 2
MSG_ALERT = 3
MSG_COMMAND = 4
MSG_ACK = 5

# alert codes
ALERT_RECHARGE = 1
ALERT_REFILL = 2
ALERT_DECONTAMINATE = 3

# command codes
CMD_SET_MODE = 1
CMD_SPRAY_ON = 2
CMD_SPRAY_OFF = 3
CMD_ACK_ALERT = 4
CMD_SET_PARAMS = 5

# modes on the wire
MODE_AUTOMATIC = 0
MODE_MANUAL = 1

# ack status
ACK_OK = 0
ACK_REJECTED = 1
ACK_ERROR = 2

FLAG_ENCRYPTED = 0x01


class ProtocolError(Exception):
    """Base class for wire-format errors."""


class FramingError(ProtocolError):
    """Bad magic or version."""


class IntegrityError(ProtocolError):
    """CRC mismatch."""


class IncompleteError(ProtocolError):
    """Not enough bytes for a complete frame; caller should retain them."""


class SecurityError(ProtocolError):
    """Authenticated decryption failed or key missing."""


class UnsupportedError(ProtocolError):
    """Unknown message type."""


class EncodeError(ProtocolError):
    """Message cannot be serialized (e.g. oversized payload)."""


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _f32(x: float) -> float:
    """Quantize to the 32-bit wire representation."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


@dataclass(frozen=True)
class Telemetry:
    timestamp_ms: int
    number_bins: tuple[float, ...]
    mass_bins: tuple[float, ...]
    temperature: float
    rh: float
    risk: int

    def __post_init__(self):
        object.__setattr__(self, "number_bins",
                           tuple(_f32(x) for x in self.number_bins))
        object.__setattr__(self, "mass_bins",
                           tuple(_f32(x) for x in self.mass_bins))
        object.__setattr__(self, "temperature", _f32(self.temperature))
        object.__setattr__(self, "rh", _f32(self.rh))

    def to_bytes(self) -> bytes:
        if len(self.number_bins) != 5 or len(self.mass_bins) != 5:
            raise EncodeError("telemetry carries exactly 5 bins")
        return struct.pack("<I5f5fffB", self.timestamp_ms,
                           *self.number_bins, *self.mass_bins,
                           self.temperature, self.rh, self.risk)

    @staticmethod
    def from_bytes(b: bytes) -> "Telemetry":
        v = struct.unpack("<I5f5fffB", b)
        return Telemetry(v[0], tuple(v[1:6]), tuple(v[6:11]), v[11], v[12], v[13])


@dataclass(frozen=True)
class Status:
    battery_pct: int
    liquid_pct: int
    mode: int
    spraying: int
    cumulative_exposure: float

    def __post_init__(self):
        object.__setattr__(self, "cumulative_exposure",
                           _f32(self.cumulative_exposure))

    def to_bytes(self) -> bytes:
        return struct.pack("<BBBBf", self.battery_pct, self.liquid_pct,
                           self.mode, self.spraying, self.cumulative_exposure)

    @staticmethod
    def from_bytes(b: bytes) -> "Status":
        return Status(*struct.unpack("<BBBBf", b))


@dataclass(frozen=True)
class Alert:
    code: int

    def to_bytes(self) -> bytes:
        return struct.pack("<B", self.code)

    @staticmethod
    def from_bytes(b: bytes) -> "Alert":
        return Alert(*struct.unpack("<B", b))


@dataclass(frozen=True)
class Command:
    """Application -> device command; argument layout is fixed per code."""

    code: int
    mode: int | None = None             # SET_MODE
    duration: float | None = None       # SPRAY_ON / SET_PARAMS
    intensity: float | None = None      # SPRAY_ON / SET_PARAMS
    angle_factor: float | None = None   # SET_PARAMS
    alert_code: int | None = None       # ACK_ALERT

    def __post_init__(self):
        for name in ("duration", "intensity", "angle_factor"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _f32(v))

    def to_bytes(self) -> bytes:
        c = self.code
        if c == CMD_SET_MODE:
            return struct.pack("<BB", c, self.mode)
        if c == CMD_SPRAY_ON:
            return struct.pack("<Bff", c,
                               -1.0 if self.duration is None else self.duration,
                               -1.0 if self.intensity is None else self.intensity)
        if c == CMD_SPRAY_OFF:
            return struct.pack("<B", c)
        if c == CMD_ACK_ALERT:
            return struct.pack("<BB", c, self.alert_code)
        if c == CMD_SET_PARAMS:
            return struct.pack("<Bfff", c, self.duration, self.intensity,
                               self.angle_factor)
        raise EncodeError(f"unknown command code {c}")

    @staticmethod
    def from_bytes(b: bytes) -> "Command":
        if not b:
            raise UnsupportedError("empty command")
        c = b[0]
        try:
            if c == CMD_SET_MODE:
                return Command(c, mode=struct.unpack("<B", b[1:])[0])
            if c == CMD_SPRAY_ON:
                dur, inten = struct.unpack("<ff", b[1:])
                return Command(c, duration=None if dur < 0 else dur,
                               intensity=None if inten < 0 else inten)
            if c == CMD_SPRAY_OFF:
                if len(b) != 1:
                    raise UnsupportedError("trailing bytes in SPRAY_OFF")
                return Command(c)
            if c == CMD_ACK_ALERT:
                return Command(c, alert_code=struct.unpack("<B", b[1:])[0])
            if c == CMD_SET_PARAMS:
                dur, inten, ang = struct.unpack("<fff", b[1:])
                return Command(c, duration=dur, intensity=inten, angle_factor=ang)
        except struct.error as exc:
            raise UnsupportedError(f"malformed command args: {exc}") from exc
        raise UnsupportedError(f"unknown command code {c}")


@dataclass(frozen=True)
class Ack:
    seq: int
    status: int

    def to_bytes(self) -> bytes:
        return struct.pack("<HB", self.seq, self.status)

    @staticmethod
    def from_bytes(b: bytes) -> "Ack":
        return Ack(*struct.unpack("<HB", b))


Message = Telemetry | Status | Alert | Command | Ack

_TYPE_BY_CLASS = {Telemetry: MSG_TELEMETRY, Status: MSG_STATUS,
                  Alert: MSG_ALERT, Command: MSG_COMMAND, Ack: MSG_ACK}
_CLASS_BY_TYPE = {v: k for k, v in _TYPE_BY_CLASS.items()}


@dataclass
class SessionKey:
    """Pre-shared 32-byte key with a monotonic 96-bit nonce counter."""

    key: bytes
    nonce_counter: int = 0

    def __post_init__(self):
        if len(self.key) != 32:
            raise ValueError("session key must be 32 bytes")

    def next_nonce(self) -> bytes:
        n = self.nonce_counter
        if n >= 1 << 96:
            raise SecurityError("nonce counter exhausted")
        self.nonce_counter = n + 1
        return n.to_bytes(NONCE_LEN, "big")


def encode_frame(msg: Message, seq: int, key: SessionKey | None = None) -> bytes:
    """Serialize one message into a wire frame, sealing it if a key is given."""
    try:
        payload = msg.to_bytes()
    except struct.error as exc:
        raise EncodeError(str(exc)) from exc
    for cls, msg_type in _TYPE_BY_CLASS.items():
        if isinstance(msg, cls):
            break
    else:
        raise EncodeError(f"not a protocol message: {type(msg).__name__}")

    flags = 0
    if key is not None:
        flags |= FLAG_ENCRYPTED
        wire_len = NONCE_LEN + len(payload) + 16
    else:
        wire_len = len(payload)
    if wire_len > MAX_PAYLOAD:
        raise EncodeError(f"payload of {wire_len} bytes exceeds {MAX_PAYLOAD}")

    header = MAGIC + struct.pack("<BBBHH", VERSION, msg_type, flags, seq, wire_len)
    if key is not None:
        nonce = key.next_nonce()
        ct = ChaCha20Poly1305(key.key).encrypt(nonce, payload, header)
        payload = nonce + ct

    body = header + payload
    return body + struct.pack("<I", crc32(body))


def _parse_payload(msg_type: int, payload: bytes) -> Message:
    cls = _CLASS_BY_TYPE.get(msg_type)
    if cls is None:
        raise UnsupportedError(f"unknown message type {msg_type}")
    try:
        return cls.from_bytes(payload)
    except struct.error as exc:
        raise UnsupportedError(f"malformed {cls.__name__} payload: {exc}") from exc


def decode_frame(data: bytes, key: SessionKey | None = None
                 ) -> tuple[Message, int]:
    """Decode one complete frame; returns (message, seq).

    Raises IncompleteError when more bytes are needed (the caller keeps the
    buffer), FramingError / IntegrityError / SecurityError / UnsupportedError
    on bad frames.
    """
    if len(data) < HEADER_LEN:
        raise IncompleteError("header incomplete")
    if data[:2] != MAGIC:
        raise FramingError("bad magic")
    version, msg_type, flags, seq, plen = struct.unpack("<BBBHH", data[2:HEADER_LEN])
    if version != VERSION:
        raise FramingError(f"unsupported version {version}")
    if plen > MAX_PAYLOAD:
        raise FramingError(f"payload length {plen} exceeds maximum")
    total = HEADER_LEN + plen + CRC_LEN
    if len(data) < total:
        raise IncompleteError(f"need {total} bytes, have {len(data)}")

    body = data[:HEADER_LEN + plen]
    (crc,) = struct.unpack("<I", data[HEADER_LEN + plen:total])
    if crc != crc32(body):
        raise IntegrityError("crc mismatch")

    payload = bytes(body[HEADER_LEN:])
    if flags & FLAG_ENCRYPTED:
        if key is None:
            raise SecurityError("encrypted frame but no session key")
        if len(payload) < NONCE_LEN + 16:
            raise SecurityError("sealed payload too short")
        nonce, ct = payload[:NONCE_LEN], payload[NONCE_LEN:]
        try:
            payload = ChaCha20Poly1305(key.key).decrypt(nonce, ct, bytes(body[:HEADER_LEN]))
        except InvalidTag as exc:
            raise SecurityError("authentication failed") from exc
    return _parse_payload(msg_type, payload), seq


def frame_length(data: bytes) -> int | None:
    """Total length of the frame starting at data[0], if the header is known."""
    if len(data) < HEADER_LEN:
        return None
    (plen,) = struct.unpack("<H", data[7:9])
    return HEADER_LEN + plen + CRC_LEN


def stream_reassemble(buffer: bytes, key: SessionKey | None = None
                      ) -> tuple[list[tuple[Message, int]], bytes]:
    """Extract every complete frame from an arbitrary byte stream.

    Resynchronizes on the magic pair after garbage or a corrupt frame by
    advancing one byte at a time.  Returns (decoded frames, remainder).
    """
    frames: list[tuple[Message, int]] = []
    buf = bytes(buffer)
    pos = 0
    while True:
        idx = buf.find(MAGIC, pos)
        if idx < 0:
            # keep a trailing 0xA5 in case the second magic byte is in flight
            tail = len(buf) - 1 if buf.endswith(MAGIC[:1]) else len(buf)
            return frames, buf[max(tail, pos):]
        chunk = buf[idx:]
        try:
            msg, seq = decode_frame(chunk, key)
        except IncompleteError:
            total = frame_length(chunk)
            if total is not None and total > MAX_PAYLOAD + HEADER_LEN + CRC_LEN:
                pos = idx + 1
                continue
            return frames, buf[idx:]
        except ProtocolError:
            pos = idx + 1
            continue
        frames.append((msg, seq))
        buf = chunk[frame_length(chunk):]
        pos = 0


# ---------------------------------------------------------------------------
# JSON mirror used by the gateway (field names match the dataclasses)
# ---------------------------------------------------------------------------

_KIND_BY_CLASS = {Telemetry: "telemetry", Status: "status", Alert: "alert",
                  Command: "command", Ack: "ack"}
_CLASS_BY_KIND = {v: k for k, v in _KIND_BY_CLASS.items()}


def message_to_json(msg: Message, seq: int) -> str:
    obj = {"type": _KIND_BY_CLASS[type(msg)], "frame_seq": seq}
    for f in fields(msg):
        v = getattr(msg, f.name)
        if isinstance(v, tuple):
            v = list(v)
        obj[f.name] = v
    return json.dumps(obj)


def message_from_json(line: str) -> tuple[Message, int]:
    obj = json.loads(line)
    cls = _CLASS_BY_KIND.get(obj.get("type"))
    if cls is None:
        raise UnsupportedError(f"unknown json message type {obj.get('type')!r}")
    seq = int(obj.get("frame_seq", 0))
    kwargs = {f.name: obj[f.name] for f in fields(cls) if f.name in obj}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    return cls(**kwargs), seq
