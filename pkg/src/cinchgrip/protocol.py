"""Bit-exact codec for the Dynamixel Protocol 2.0 packet format.

Frame layout (little-endian multi-byte fields):

    FF FF FD 00 | id | length (2) | instruction | [error] | params | crc (2)

``length`` counts everything after itself (instruction through CRC).
Status frames carry instruction 0x55 plus an error byte; the CRC covers
all preceding bytes. The header pattern FF FF FD is kept out of payloads
by byte stuffing (FF FF FD -> FF FF FD FD).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

HEADER = bytes((0xFF, 0xFF, 0xFD, 0x00))
BROADCAST_ID = 0xFE
MAX_UNICAST_ID = 0xFC
STATUS_INSTRUCTION = 0x55

# length field counts instruction + params + crc (and error byte for status)
_LENGTH_CAPACITY = 0xFFFF
_INSTR_OVERHEAD = 3   # instruction + crc16
_STATUS_OVERHEAD = 4  # instruction + error + crc16

DEFAULT_BUFFER_CAP = 4096

CRC_POLY = 0x8005
CRC_INIT = 0x0000


class Instruction(enum.IntEnum):
    PING = 0x01
    READ = 0x02
    WRITE = 0x03
    REG_WRITE = 0x04
    ACTION = 0x05
    FACTORY_RESET = 0x06
    REBOOT = 0x08
    SYNC_READ = 0x82
    SYNC_WRITE = 0x83
    BULK_READ = 0x92
    BULK_WRITE = 0x93
    STATUS = 0x55


class ProtocolError(Exception):
    pass


class PacketTooLong(ProtocolError):
    pass


class InvalidPacket(ProtocolError):
    pass


def _crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ CRC_POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _crc_table()


def crc16(data: bytes) -> int:
    """CRC-16 over ``data``: poly 0x8005, init 0, no reflection, no final XOR."""
    crc = CRC_INIT
    for byte in data:
        crc = ((crc << 8) ^ _CRC_TABLE[((crc >> 8) ^ byte) & 0xFF]) & 0xFFFF
    return crc


def stuff(params: bytes) -> bytes:
    """Escape the header pattern: each FF FF FD becomes FF FF FD FD."""
    out = bytearray()
    run = 0  # how much of FF FF FD is matched so far
    for byte in params:
        out.append(byte)
        if run == 2 and byte == 0xFD:
            out.append(0xFD)
            run = 0
        elif byte == 0xFF:
            run = min(run + 1, 2)
        else:
            run = 0
    return bytes(out)


def unstuff(params: bytes) -> bytes:
    """Inverse of :func:`stuff`: each FF FF FD FD collapses to FF FF FD."""
    out = bytearray()
    run = 0
    skip = False
    for byte in params:
        if skip:
            skip = False
            if byte != 0xFD:
                raise InvalidPacket(
                    f"header pattern not stuffed (followed by {byte:#04x})"
                )
            continue
        out.append(byte)
        if run == 2 and byte == 0xFD:
            skip = True
            run = 0
        elif byte == 0xFF:
            run = min(run + 1, 2)
        else:
            run = 0
    if skip:
        raise InvalidPacket("stuffed frame truncated inside escape")
    return bytes(out)


@dataclass(frozen=True)
class InstructionPacket:
    """One command frame addressed to a device (params in unstuffed form)."""

    id: int
    instruction: Instruction
    params: bytes = b""

    def __post_init__(self):
        if not (0 <= self.id <= MAX_UNICAST_ID or self.id == BROADCAST_ID):
            raise InvalidPacket(f"id {self.id} not a unicast or broadcast address")
        object.__setattr__(self, "instruction", Instruction(self.instruction))
        object.__setattr__(self, "params", bytes(self.params))


@dataclass(frozen=True)
class StatusPacket:
    """One reply frame from a device.

    ``error`` bit 7 is the hardware-alert flag; bits 0..6 are the result
    code (0 = ok).
    """

    id: int
    error: int
    params: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "params", bytes(self.params))

    @property
    def result_code(self) -> int:
        return self.error & 0x7F

    @property
    def hardware_alert(self) -> bool:
        return bool(self.error & 0x80)


def _frame(id_: int, body: bytes) -> bytes:
    length = len(body) + 2  # body + crc
    if length > _LENGTH_CAPACITY:
        raise PacketTooLong(f"framed length {length} exceeds 16-bit length field")
    head = HEADER + bytes((id_,)) + length.to_bytes(2, "little") + body
    return head + crc16(head).to_bytes(2, "little")


def encode(packet: InstructionPacket) -> bytes:
    """Frame an instruction packet, stuffing its params."""
    return _frame(packet.id, bytes((packet.instruction,)) + stuff(packet.params))


def encode_status(packet: StatusPacket) -> bytes:
    """Frame a status packet the way a device would reply."""
    body = bytes((STATUS_INSTRUCTION, packet.error & 0xFF)) + stuff(packet.params)
    return _frame(packet.id, body)


@dataclass(frozen=True)
class DecodeError:
    """In-band decode diagnostic; never raised."""

    kind: str  # "crc_mismatch" | "bad_header" | "truncated"
    detail: str = ""


class Sync(enum.Enum):
    SEARCHING = "searching"
    IN_PACKET = "in_packet"


@dataclass(frozen=True)
class DecoderState:
    """Pending bytes of an incremental decode, owned by one consumer."""

    buffer: bytes = b""
    sync: Sync = Sync.SEARCHING
    buffer_cap: int = DEFAULT_BUFFER_CAP
    expect_status: bool = True  # False: decode instruction frames (device side)


def _parse_candidate(buf: bytes, expect_status: bool):
    """Try to parse one frame at buf[0:]. Returns (consumed, packet|None, err|None).

    consumed == 0 means "need more bytes".
    """
    if len(buf) < 7:
        return 0, None, None
    id_ = buf[4]
    length = int.from_bytes(buf[5:7], "little")
    min_len = _STATUS_OVERHEAD if expect_status else _INSTR_OVERHEAD
    if length < min_len:
        return -1, None, DecodeError("bad_header", f"length {length} too short")
    if expect_status and id_ == BROADCAST_ID:
        return -1, None, DecodeError("bad_header", "broadcast id in status frame")
    if id_ > MAX_UNICAST_ID and id_ != BROADCAST_ID:
        return -1, None, DecodeError("bad_header", f"id {id_} out of range")
    total = 7 + length
    if len(buf) < total:
        if expect_status and len(buf) >= 8 and buf[7] != STATUS_INSTRUCTION:
            return -1, None, DecodeError("bad_header", "not a status instruction")
        return 0, None, None
    frame = buf[:total]
    crc_rx = int.from_bytes(frame[-2:], "little")
    if crc16(frame[:-2]) != crc_rx:
        return -1, None, DecodeError(
            "crc_mismatch", f"got {crc_rx:#06x}, want {crc16(frame[:-2]):#06x}"
        )
    if expect_status:
        if frame[7] != STATUS_INSTRUCTION:
            return -1, None, DecodeError("bad_header", "not a status instruction")
        try:
            params = unstuff(frame[9:-2])
        except InvalidPacket as exc:
            return -1, None, DecodeError("bad_header", str(exc))
        return total, StatusPacket(id=id_, error=frame[8], params=params), None
    try:
        instr = Instruction(frame[7])
        params = unstuff(frame[8:-2])
    except (ValueError, InvalidPacket) as exc:
        return -1, None, DecodeError("bad_header", str(exc))
    return total, InstructionPacket(id=id_, instruction=instr, params=params), None


def decode_step(state: DecoderState, chunk: bytes):
    """Feed ``chunk`` into the decoder.

    Returns (new_state, packets, errors). Frames split across chunks are
    reassembled; malformed data is reported in-band and skipped by
    resyncing on the next header candidate.
    """
    buf = state.buffer + bytes(chunk)
    packets = []
    errors = []

    while True:
        start = buf.find(HEADER)
        if start < 0:
            # silently drop garbage, keeping at most a header prefix
            keep = 0
            for k in (3, 2, 1):
                if buf[-k:] == HEADER[:k]:
                    keep = k
                    break
            buf = buf[-keep:] if keep else b""
            sync = Sync.SEARCHING
            break
        buf = buf[start:]
        consumed, packet, err = _parse_candidate(buf, state.expect_status)
        if consumed == 0:
            if len(buf) > state.buffer_cap:
                errors.append(
                    DecodeError("truncated", "frame exceeds decoder buffer cap")
                )
                buf = buf[1:]
                continue
            sync = Sync.IN_PACKET
            break
        if packet is not None:
            packets.append(packet)
            buf = buf[consumed:]
            continue
        # malformed frame: report, then resync past this header candidate
        errors.append(err)
        buf = buf[1:]

    new_state = replace(state, buffer=buf, sync=sync)
    return new_state, packets, errors


def crc16_bitwise(data: bytes) -> int:
    """Shift-register reference implementation (oracle for the table version)."""
    crc = CRC_INIT
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ CRC_POLY) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc
