"""Transport abstraction, bus transactions, and the two-motor HAL.

One transaction is in flight per transport at any time; the bus object
enforces this with a lock plus an owner check so a same-thread re-entry
fails loudly instead of deadlocking.
"""

from __future__ import annotations

import enum
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from . import registers as reg
from .protocol import (
    BROADCAST_ID,
    DecoderState,
    Instruction,
    InstructionPacket,
    StatusPacket,
    decode_step,
    encode,
)

DEFAULT_DEADLINE_S = 0.020
DEFAULT_RETRIES = 2
DEFAULT_CURRENT_CAP_MA = 150.0


class BusError(Exception):
    pass


class Timeout(BusError):
    pass


class CrcGiveUp(BusError):
    pass


class BusBusy(BusError):
    pass


class DeviceError(BusError):
    def __init__(self, device_id: int, error: int):
        self.device_id = device_id
        self.code = error & 0x7F
        self.hardware_alert = bool(error & 0x80)
        super().__init__(
            f"device {device_id} returned error code {self.code}"
            + (" (hardware alert)" if self.hardware_alert else "")
        )


class OutOfRange(BusError):
    pass


class ModeChangeWhileTorqued(BusError):
    pass


class VerifyFailed(BusError):
    pass


class UnknownRegister(BusError):
    pass


class Transport(Protocol):
    """Byte-stream capability used by the bus layer.

    ``read`` returns whatever is available, blocking at most ``timeout_s``.
    """

    def write(self, data: bytes) -> None: ...

    def read(self, max_bytes: int, timeout_s: float) -> bytes: ...

    def flush(self) -> None: ...


class LoopbackTransport:
    """Scripted transport for tests: queued reply chunks, recorded writes."""

    def __init__(self, script: Optional[list[bytes]] = None):
        self.writes: list[bytes] = []
        self._replies: queue.Queue[bytes] = queue.Queue()
        self.on_write: Optional[Callable[[bytes], None]] = None
        for chunk in script or []:
            self._replies.put(chunk)

    def push_reply(self, chunk: bytes) -> None:
        self._replies.put(chunk)

    def write(self, data: bytes) -> None:
        self.writes.append(bytes(data))
        if self.on_write is not None:
            self.on_write(bytes(data))

    def read(self, max_bytes: int, timeout_s: float) -> bytes:
        try:
            return self._replies.get(timeout=max(timeout_s, 0.0))
        except queue.Empty:
            return b""

    def flush(self) -> None:
        pass


class SerialTransport:
    """8N1 serial port transport (requires the optional pyserial extra)."""

    def __init__(self, device: str, baud: int = 57600):
        try:
            import serial
        except ImportError as exc:  # pragma: no cover - hardware only
            raise BusError(
                "pyserial is not installed; install cinchgrip[hardware]"
            ) from exc
        self._port = serial.Serial(device, baudrate=baud, timeout=0)

    def write(self, data: bytes) -> None:  # pragma: no cover - hardware only
        self._port.write(data)

    def read(self, max_bytes: int, timeout_s: float) -> bytes:  # pragma: no cover
        self._port.timeout = max(timeout_s, 0.0)
        return self._port.read(max_bytes)

    def flush(self) -> None:  # pragma: no cover - hardware only
        self._port.reset_input_buffer()


def transact(
    transport: Transport,
    packet: InstructionPacket,
    deadline_s: float = DEFAULT_DEADLINE_S,
    retries: int = DEFAULT_RETRIES,
) -> StatusPacket:
    """Write one instruction frame and read back the matching status.

    Retries the whole exchange on CRC errors (up to ``retries`` times);
    a silent bus times out after a single deadline.
    """
    attempts_left = retries
    while True:
        transport.flush()
        transport.write(encode(packet))
        state = DecoderState()
        t_end = time.monotonic() + deadline_s
        crc_error = False
        while True:
            remaining = t_end - time.monotonic()
            if remaining <= 0:
                break
            chunk = transport.read(256, remaining)
            if not chunk:
                continue
            state, packets, errors = decode_step(state, chunk)
            crc_error = crc_error or any(e.kind == "crc_mismatch" for e in errors)
            for status in packets:
                if packet.id != BROADCAST_ID and status.id != packet.id:
                    continue
                if status.error != 0:
                    raise DeviceError(status.id, status.error)
                return status
            if crc_error:
                break
        if crc_error:
            if attempts_left > 0:
                attempts_left -= 1
                continue
            raise CrcGiveUp(f"no valid reply from id {packet.id} after retries")
        raise Timeout(f"no reply from id {packet.id} within {deadline_s * 1e3:.0f} ms")


class MotorBus:
    """Serializes transactions from any number of callers over one transport."""

    def __init__(
        self,
        transport: Transport,
        deadline_s: float = DEFAULT_DEADLINE_S,
        retries: int = DEFAULT_RETRIES,
    ):
        self._transport = transport
        self._deadline_s = deadline_s
        self._retries = retries
        self._lock = threading.Lock()
        self._owner: Optional[int] = None

    def transact(
        self, packet: InstructionPacket, deadline_s: Optional[float] = None
    ) -> StatusPacket:
        me = threading.get_ident()
        if self._owner == me:
            raise BusBusy("transaction already in flight on this transport")
        with self._lock:
            self._owner = me
            try:
                return transact(
                    self._transport,
                    packet,
                    deadline_s if deadline_s is not None else self._deadline_s,
                    self._retries,
                )
            finally:
                self._owner = None

    def ping(self, device_id: int) -> StatusPacket:
        return self.transact(InstructionPacket(device_id, Instruction.PING))

    def read(self, device_id: int, address: int, length: int) -> bytes:
        params = address.to_bytes(2, "little") + length.to_bytes(2, "little")
        status = self.transact(InstructionPacket(device_id, Instruction.READ, params))
        return status.params

    def read_register(self, device_id: int, spec: reg.RegisterSpec) -> int:
        data = self.read(device_id, spec.address, spec.width)
        return int.from_bytes(data[: spec.width], "little")

    def write_register(self, device_id: int, spec: reg.RegisterSpec, raw: int) -> None:
        if reg.BY_ADDRESS.get(spec.address) != spec:
            raise UnknownRegister(f"{spec.name}@{spec.address} not in control table")
        if spec.access is not reg.Access.RW:
            raise UnknownRegister(f"register {spec.name} is read-only")
        params = spec.address.to_bytes(2, "little") + int(raw).to_bytes(
            spec.width, "little"
        )
        self.transact(InstructionPacket(device_id, Instruction.WRITE, params))


class Role(enum.Enum):
    CLOSER = "closer"
    OPENER = "opener"


@dataclass(frozen=True)
class MotorRole:
    role: Role
    bus_id: int


class MotorHal:
    """Engineering-unit facade over the two gripper motors.

    ``secured_probe``/``on_warning`` let the owning controller flag a
    torque-off issued while a grip is being held.
    """

    def __init__(
        self,
        bus: MotorBus,
        closer_id: int = 1,
        opener_id: int = 2,
        current_cap_ma: float = DEFAULT_CURRENT_CAP_MA,
        secured_probe: Optional[Callable[[], bool]] = None,
        on_warning: Optional[Callable[[str], None]] = None,
    ):
        if closer_id == opener_id:
            raise ValueError("closer and opener must have distinct bus ids")
        self.bus = bus
        self.current_cap_ma = current_cap_ma
        self.closer = MotorRole(Role.CLOSER, closer_id)
        self.opener = MotorRole(Role.OPENER, opener_id)
        self.secured_probe = secured_probe
        self.on_warning = on_warning

    def motor(self, role: Role) -> MotorRole:
        return self.closer if role is Role.CLOSER else self.opener

    def ping(self, motor: MotorRole) -> StatusPacket:
        return self.bus.ping(motor.bus_id)

    def read_state(self, motor: MotorRole) -> reg.MotorState:
        # one contiguous read spanning present current/velocity/position
        span = (
            reg.PRESENT_CURRENT.width
            + reg.PRESENT_VELOCITY.width
            + reg.PRESENT_POSITION.width
        )
        data = self.bus.read(motor.bus_id, reg.PRESENT_CURRENT.address, span)
        if len(data) < span:
            raise BusError(f"short read: {len(data)} of {span} bytes")
        return reg.MotorState.from_raw(
            current=int.from_bytes(data[0:2], "little"),
            velocity=int.from_bytes(data[2:6], "little"),
            position=int.from_bytes(data[6:10], "little"),
        )

    def set_goal_current(self, motor: MotorRole, current_ma: float) -> None:
        if abs(current_ma) > self.current_cap_ma:
            raise OutOfRange(
                f"|{current_ma:.0f}| mA exceeds cap {self.current_cap_ma:.0f} mA"
            )
        raw = reg.current_raw(current_ma)
        self.bus.write_register(motor.bus_id, reg.GOAL_CURRENT, raw)

    def set_operating_mode(self, motor: MotorRole, mode: reg.OperatingMode) -> None:
        torqued = self.bus.read_register(motor.bus_id, reg.TORQUE_ENABLE)
        if torqued:
            raise ModeChangeWhileTorqued(
                f"disable torque on id {motor.bus_id} before changing mode"
            )
        self.bus.write_register(motor.bus_id, reg.OPERATING_MODE, int(mode))
        back = self.bus.read_register(motor.bus_id, reg.OPERATING_MODE)
        if back != int(mode):
            raise VerifyFailed(f"mode readback {back}, wanted {int(mode)}")

    def torque(self, motor: MotorRole, on: bool) -> None:
        if not on and self.secured_probe is not None and self.secured_probe():
            if self.on_warning is not None:
                self.on_warning(
                    f"torque disabled on {motor.role.value} while grip is secured"
                )
        self.bus.write_register(motor.bus_id, reg.TORQUE_ENABLE, 1 if on else 0)
