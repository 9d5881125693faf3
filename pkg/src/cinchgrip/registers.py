"""XL330-M288T control-table subset and raw/engineering unit conversions."""

from __future__ import annotations

import enum
from dataclasses import dataclass

TICKS_PER_REV = 4096          # position: raw ticks per output revolution
VELOCITY_UNIT_RPM = 0.229     # velocity: rev/min per raw unit
CURRENT_UNIT_MA = 1.0         # current: mA per raw unit


class Access(enum.Enum):
    RO = "ro"
    RW = "rw"


@dataclass(frozen=True)
class RegisterSpec:
    name: str
    address: int
    width: int  # bytes, one of 1/2/4
    access: Access

    def __post_init__(self):
        if self.width not in (1, 2, 4):
            raise ValueError(f"register {self.name}: width {self.width}")


MODEL_NUMBER = RegisterSpec("model_number", 0, 2, Access.RO)
FIRMWARE_VERSION = RegisterSpec("firmware_version", 6, 1, Access.RO)
DEVICE_ID = RegisterSpec("id", 7, 1, Access.RW)
OPERATING_MODE = RegisterSpec("operating_mode", 11, 1, Access.RW)
TORQUE_ENABLE = RegisterSpec("torque_enable", 64, 1, Access.RW)
HARDWARE_ERROR_STATUS = RegisterSpec("hardware_error_status", 70, 1, Access.RO)
GOAL_CURRENT = RegisterSpec("goal_current", 102, 2, Access.RW)
GOAL_POSITION = RegisterSpec("goal_position", 116, 4, Access.RW)
PRESENT_CURRENT = RegisterSpec("present_current", 126, 2, Access.RO)
PRESENT_VELOCITY = RegisterSpec("present_velocity", 128, 4, Access.RO)
PRESENT_POSITION = RegisterSpec("present_position", 132, 4, Access.RO)

CONTROL_TABLE: tuple[RegisterSpec, ...] = (
    MODEL_NUMBER,
    FIRMWARE_VERSION,
    DEVICE_ID,
    OPERATING_MODE,
    TORQUE_ENABLE,
    HARDWARE_ERROR_STATUS,
    GOAL_CURRENT,
    GOAL_POSITION,
    PRESENT_CURRENT,
    PRESENT_VELOCITY,
    PRESENT_POSITION,
)

BY_ADDRESS = {reg.address: reg for reg in CONTROL_TABLE}
assert len(BY_ADDRESS) == len(CONTROL_TABLE), "duplicate register addresses"

XL330_MODEL_NUMBER = 1200


class OperatingMode(enum.IntEnum):
    CURRENT_CONTROL = 0
    POSITION_CONTROL = 3
    CURRENT_BASED_POSITION = 5


def to_signed(raw: int, width: int) -> int:
    """Interpret a raw register value as two's complement."""
    bits = width * 8
    raw &= (1 << bits) - 1
    if raw >= 1 << (bits - 1):
        raw -= 1 << bits
    return raw


def from_signed(value: int, width: int) -> int:
    """Encode a signed integer as a raw two's-complement register value."""
    bits = width * 8
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if not lo <= value <= hi:
        raise ValueError(f"value {value} does not fit in {width} bytes")
    return value & ((1 << bits) - 1)


def position_rev(raw: int) -> float:
    return to_signed(raw, 4) / TICKS_PER_REV


def position_raw(rev: float) -> int:
    return from_signed(round(rev * TICKS_PER_REV), 4)


def velocity_rpm(raw: int) -> float:
    return to_signed(raw, 4) * VELOCITY_UNIT_RPM


def velocity_raw(rpm: float) -> int:
    return from_signed(round(rpm / VELOCITY_UNIT_RPM), 4)


def current_ma(raw: int) -> float:
    return to_signed(raw, 2) * CURRENT_UNIT_MA


def current_raw(ma: float) -> int:
    return from_signed(round(ma / CURRENT_UNIT_MA), 2)


@dataclass(frozen=True)
class MotorState:
    """Present position/velocity/current of one servo in engineering units."""

    position_rev: float
    velocity_rpm: float
    current_ma: float

    @classmethod
    def from_raw(cls, position: int, velocity: int, current: int) -> "MotorState":
        return cls(
            position_rev=position_rev(position),
            velocity_rpm=velocity_rpm(velocity),
            current_ma=current_ma(current),
        )
