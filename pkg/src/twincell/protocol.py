"""Wire protocol between the twins.

Frames are little-endian: 2-byte magic, format version, message kind,
u32 payload length, payload, then CRC32 over kind + length + payload.
The checksum catches corruption before any payload field is trusted;
a builder that can't frame a message refuses rather than truncating.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

MAGIC = b"TW"
PROTOCOL_VERSION = 1
HEADER = struct.Struct("<2sBBI")
CRC = struct.Struct("<I")
MAX_PAYLOAD = 1 << 20

KIND_JOINT_STATE = 1
KIND_GRIPPER_STATE = 2
KIND_SWITCH_EVENT = 3
KIND_FORCE_EVENT = 4
KIND_LOG_EVENT = 5
KIND_HEARTBEAT = 6
KIND_ACK = 7


class ProtocolError(ValueError):
    pass


class ChecksumError(ProtocolError):
    """Frame arrived intact enough to parse but failed its CRC."""


@dataclass(frozen=True)
class JointState:
    t_us: int
    angles: tuple[float, ...]

    kind = KIND_JOINT_STATE

    def payload(self) -> bytes:
        return struct.pack(f"<Q{len(self.angles)}d", self.t_us, *self.angles)

    @classmethod
    def from_payload(cls, data: bytes) -> "JointState":
        if len(data) < 8 or (len(data) - 8) % 8 != 0:
            raise ProtocolError(f"joint state payload of {len(data)} bytes")
        n = (len(data) - 8) // 8
        vals = struct.unpack(f"<Q{n}d", data)
        return cls(vals[0], tuple(vals[1:]))


@dataclass(frozen=True)
class GripperState:
    t_us: int
    mode: str  # "open" | "closed" | "width"
    width: float = 0.0

    kind = KIND_GRIPPER_STATE
    _MODES = ("open", "closed", "width")

    def payload(self) -> bytes:
        return struct.pack("<QBd", self.t_us, self._MODES.index(self.mode), self.width)

    @classmethod
    def from_payload(cls, data: bytes) -> "GripperState":
        t_us, mode_i, width = _unpack("<QBd", data, "gripper state")
        if mode_i >= len(cls._MODES):
            raise ProtocolError(f"gripper mode {mode_i}")
        return cls(t_us, cls._MODES[mode_i], width)


@dataclass(frozen=True)
class SwitchEvent:
    t_us: int
    switch: str
    pressed: bool

    kind = KIND_SWITCH_EVENT

    def payload(self) -> bytes:
        raw = self.switch.encode("utf-8")
        return struct.pack("<QH", self.t_us, len(raw)) + raw + struct.pack("<B", self.pressed)

    @classmethod
    def from_payload(cls, data: bytes) -> "SwitchEvent":
        if len(data) < 11:
            raise ProtocolError(f"switch event payload of {len(data)} bytes")
        t_us, n = struct.unpack_from("<QH", data)
        if len(data) != 10 + n + 1:
            raise ProtocolError("switch event length mismatch")
        return cls(t_us, data[10 : 10 + n].decode("utf-8"), bool(data[10 + n]))


@dataclass(frozen=True)
class ForceEvent:
    t_us: int
    magnitude: float  # N
    label: str = ""

    kind = KIND_FORCE_EVENT

    def payload(self) -> bytes:
        raw = self.label.encode("utf-8")
        return struct.pack("<QdH", self.t_us, self.magnitude, len(raw)) + raw

    @classmethod
    def from_payload(cls, data: bytes) -> "ForceEvent":
        if len(data) < 18:
            raise ProtocolError(f"force event payload of {len(data)} bytes")
        t_us, mag, n = struct.unpack_from("<QdH", data)
        if len(data) != 18 + n:
            raise ProtocolError("force event length mismatch")
        return cls(t_us, mag, data[18:].decode("utf-8"))


@dataclass(frozen=True)
class LogEvent:
    t_us: int
    record_kind: int
    detail: str = ""

    kind = KIND_LOG_EVENT

    def payload(self) -> bytes:
        raw = self.detail.encode("utf-8")
        return struct.pack("<QBH", self.t_us, self.record_kind, len(raw)) + raw

    @classmethod
    def from_payload(cls, data: bytes) -> "LogEvent":
        if len(data) < 11:
            raise ProtocolError(f"log event payload of {len(data)} bytes")
        t_us, rk, n = struct.unpack_from("<QBH", data)
        if len(data) != 11 + n:
            raise ProtocolError("log event length mismatch")
        return cls(t_us, rk, data[11:].decode("utf-8"))


@dataclass(frozen=True)
class Heartbeat:
    uptime_ms: int

    kind = KIND_HEARTBEAT

    def payload(self) -> bytes:
        return struct.pack("<I", self.uptime_ms)

    @classmethod
    def from_payload(cls, data: bytes) -> "Heartbeat":
        (uptime,) = _unpack("<I", data, "heartbeat")
        return cls(uptime)


@dataclass(frozen=True)
class Ack:
    serial: int
    ok: bool = True
    message: str = ""

    kind = KIND_ACK

    def payload(self) -> bytes:
        raw = self.message.encode("utf-8")
        return struct.pack("<IBH", self.serial, self.ok, len(raw)) + raw

    @classmethod
    def from_payload(cls, data: bytes) -> "Ack":
        if len(data) < 7:
            raise ProtocolError(f"ack payload of {len(data)} bytes")
        serial, ok, n = struct.unpack_from("<IBH", data)
        if len(data) != 7 + n:
            raise ProtocolError("ack length mismatch")
        return cls(serial, bool(ok), data[7:].decode("utf-8"))


Message = JointState | GripperState | SwitchEvent | ForceEvent | LogEvent | Heartbeat | Ack

_DECODERS = {
    KIND_JOINT_STATE: JointState.from_payload,
    KIND_GRIPPER_STATE: GripperState.from_payload,
    KIND_SWITCH_EVENT: SwitchEvent.from_payload,
    KIND_FORCE_EVENT: ForceEvent.from_payload,
    KIND_LOG_EVENT: LogEvent.from_payload,
    KIND_HEARTBEAT: Heartbeat.from_payload,
    KIND_ACK: Ack.from_payload,
}


def _unpack(fmt: str, data: bytes, what: str):
    if len(data) != struct.calcsize(fmt):
        raise ProtocolError(f"{what} payload of {len(data)} bytes, expected {struct.calcsize(fmt)}")
    return struct.unpack(fmt, data)


def _crc(kind: int, payload: bytes) -> int:
    head = struct.pack("<BI", kind, len(payload))
    return zlib.crc32(head + payload) & 0xFFFFFFFF


def encode_frame(msg: Message) -> bytes:
    payload = msg.payload()
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = HEADER.pack(MAGIC, PROTOCOL_VERSION, msg.kind, len(payload))
    return header + payload + CRC.pack(_crc(msg.kind, payload))


def decode_frame(buf: bytes) -> tuple[Message, int]:
    """Decode one frame from the head of buf; returns (message, bytes consumed)."""
    if len(buf) < HEADER.size:
        raise ProtocolError(f"short frame: {len(buf)} bytes")
    magic, version, kind, length = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload {length} exceeds {MAX_PAYLOAD}")
    total = HEADER.size + length + CRC.size
    if len(buf) < total:
        raise ProtocolError(f"short frame: {len(buf)} of {total} bytes")
    payload = buf[HEADER.size : HEADER.size + length]
    (stated,) = CRC.unpack_from(buf, HEADER.size + length)
    if stated != _crc(kind, payload):
        raise ChecksumError(f"checksum mismatch on kind {kind}")
    decoder = _DECODERS.get(kind)
    if decoder is None:
        raise ProtocolError(f"unknown message kind {kind}")
    return decoder(payload), total


class FrameDecoder:
    """Incremental decoder over a byte stream.

    Feed arbitrary chunks; complete frames come out in order.  A
    checksum failure drops that frame and resynchronizes at the next
    magic, so one corrupt frame never poisons the stream.
    """

    def __init__(self):
        self._buf = bytearray()
        self.dropped = 0

    def feed(self, chunk: bytes) -> list[Message]:
        self._buf.extend(chunk)
        out: list[Message] = []
        while True:
            start = self._buf.find(MAGIC)
            if start < 0:
                self._buf.clear()
                return out
            if start > 0:
                del self._buf[:start]
                self.dropped += start
            if len(self._buf) < HEADER.size:
                return out
            _, _, _, length = HEADER.unpack_from(self._buf)
            if length > MAX_PAYLOAD:
                del self._buf[:2]
                self.dropped += 2
                continue
            total = HEADER.size + length + CRC.size
            if len(self._buf) < total:
                return out
            try:
                msg, consumed = decode_frame(bytes(self._buf[:total]))
                out.append(msg)
                del self._buf[:consumed]
            except ProtocolError:
                del self._buf[:2]
                self.dropped += 2
