import threading
import time

import pytest

from cinchgrip import registers as reg
from cinchgrip.bus import (
    BusBusy,
    CrcGiveUp,
    DeviceError,
    LoopbackTransport,
    ModeChangeWhileTorqued,
    MotorBus,
    MotorHal,
    OutOfRange,
    Timeout,
    UnknownRegister,
    VerifyFailed,
    transact,
)
from cinchgrip.protocol import (
    Instruction,
    InstructionPacket,
    StatusPacket,
    encode_status,
)


def status_reply(device_id, params=b"", error=0):
    return encode_status(StatusPacket(id=device_id, error=error, params=params))


def make_hal(script):
    transport = LoopbackTransport(script)
    return MotorHal(MotorBus(transport)), transport


class TestTransact:
    def test_scripted_ping(self):
        transport = LoopbackTransport([status_reply(1, bytes([0xB0, 0x04, 0x2F]))])
        status = transact(transport, InstructionPacket(1, Instruction.PING))
        assert status.id == 1
        assert status.error == 0
        assert len(transport.writes) == 1

    def test_silent_transport_times_out_within_contract(self):
        transport = LoopbackTransport()
        t0 = time.monotonic()
        with pytest.raises(Timeout):
            transact(transport, InstructionPacket(1, Instruction.PING), deadline_s=0.05)
        elapsed = time.monotonic() - t0
        assert 0.05 <= elapsed < 0.10

    def test_crc_error_then_valid_reply_succeeds_after_retry(self):
        good = status_reply(1)
        bad = bytearray(good)
        bad[-1] ^= 0xFF
        transport = LoopbackTransport([bytes(bad), good])
        status = transact(transport, InstructionPacket(1, Instruction.PING))
        assert status.id == 1
        assert len(transport.writes) == 2  # original + one retry

    def test_crc_give_up_after_retries(self):
        bad = bytearray(status_reply(1))
        bad[-1] ^= 0xFF
        transport = LoopbackTransport([bytes(bad)] * 3)
        with pytest.raises(CrcGiveUp):
            transact(
                transport,
                InstructionPacket(1, Instruction.PING),
                deadline_s=0.05,
                retries=2,
            )
        assert len(transport.writes) == 3

    def test_device_error_raises(self):
        transport = LoopbackTransport([status_reply(1, error=0x04)])
        with pytest.raises(DeviceError) as exc:
            transact(transport, InstructionPacket(1, Instruction.PING))
        assert exc.value.code == 4
        assert not exc.value.hardware_alert

    def test_mismatched_id_skipped(self):
        transport = LoopbackTransport([status_reply(2) + status_reply(1)])
        status = transact(transport, InstructionPacket(1, Instruction.PING))
        assert status.id == 1

    def test_reentry_raises_bus_busy(self):
        calls = {}

        class Reentrant(LoopbackTransport):
            def write(self, data):
                super().write(data)
                if "inner" not in calls:
                    calls["inner"] = True
                    with pytest.raises(BusBusy):
                        bus.transact(InstructionPacket(1, Instruction.PING))
                    self.push_reply(status_reply(1))

        bus = MotorBus(Reentrant())
        assert bus.transact(InstructionPacket(1, Instruction.PING)).id == 1

    def test_transactions_serialized_across_threads(self):
        transport = LoopbackTransport()
        transport.on_write = lambda data: transport.push_reply(status_reply(data[4]))
        bus = MotorBus(transport)
        results = []

        def worker(device_id):
            results.append(bus.ping(device_id).id)

        threads = [threading.Thread(target=worker, args=(i,)) for i in (1, 2) * 8]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == sorted([1, 2] * 8)


class TestConversions:
    def test_velocity_zero(self):
        assert reg.velocity_rpm(0) == 0.0

    def test_velocity_raw_100(self):
        assert reg.velocity_rpm(100) == pytest.approx(22.9)

    def test_current_twos_complement(self):
        assert reg.current_ma(0xFF9C) == pytest.approx(-100.0)

    def test_position_ticks(self):
        assert reg.position_rev(4096) == pytest.approx(1.0)
        assert reg.position_rev(0xFFFFF000) == pytest.approx(-1.0)

    @pytest.mark.parametrize(
        "value,raw_fn,eng_fn,unit",
        [
            (1.2345, reg.position_raw, reg.position_rev, 1 / reg.TICKS_PER_REV),
            (-7.33, reg.position_raw, reg.position_rev, 1 / reg.TICKS_PER_REV),
            (22.9, reg.velocity_raw, reg.velocity_rpm, reg.VELOCITY_UNIT_RPM),
            (-13.7, reg.velocity_raw, reg.velocity_rpm, reg.VELOCITY_UNIT_RPM),
            (99.6, reg.current_raw, reg.current_ma, reg.CURRENT_UNIT_MA),
            (-42.49, reg.current_raw, reg.current_ma, reg.CURRENT_UNIT_MA),
        ],
    )
    def test_roundtrip_within_one_raw_unit(self, value, raw_fn, eng_fn, unit):
        assert abs(eng_fn(raw_fn(value)) - value) <= unit


class TestMotorHal:
    def test_read_state_converts_bulk_read(self):
        current = (100).to_bytes(2, "little")
        velocity = (100).to_bytes(4, "little")
        position = (4096 * 2).to_bytes(4, "little")
        hal, transport = make_hal([status_reply(1, current + velocity + position)])
        state = hal.read_state(hal.closer)
        assert state.current_ma == pytest.approx(100.0)
        assert state.velocity_rpm == pytest.approx(22.9)
        assert state.position_rev == pytest.approx(2.0)
        # single transaction: one read spanning the three present registers
        assert len(transport.writes) == 1
        frame = transport.writes[0]
        assert frame[7] == Instruction.READ
        assert int.from_bytes(frame[8:10], "little") == reg.PRESENT_CURRENT.address
        assert int.from_bytes(frame[10:12], "little") == 10

    def test_set_goal_current_writes_raw(self):
        hal, transport = make_hal([status_reply(1)])
        hal.set_goal_current(hal.closer, 100.0)
        frame = transport.writes[0]
        assert frame[7] == Instruction.WRITE
        assert int.from_bytes(frame[8:10], "little") == reg.GOAL_CURRENT.address
        assert int.from_bytes(frame[10:12], "little") == 100

    def test_set_goal_current_zero(self):
        hal, transport = make_hal([status_reply(1)])
        hal.set_goal_current(hal.closer, 0.0)
        assert int.from_bytes(transport.writes[0][10:12], "little") == 0

    def test_set_goal_current_over_cap(self):
        hal, transport = make_hal([])
        with pytest.raises(OutOfRange):
            hal.set_goal_current(hal.closer, 500.0)
        assert transport.writes == []

    def test_set_operating_mode_ok(self):
        hal, transport = make_hal(
            [
                status_reply(1, bytes([0])),  # torque readback: off
                status_reply(1),  # mode write ack
                status_reply(1, bytes([0])),  # mode readback
            ]
        )
        hal.set_operating_mode(hal.closer, reg.OperatingMode.CURRENT_CONTROL)
        assert len(transport.writes) == 3

    def test_set_operating_mode_while_torqued(self):
        hal, _ = make_hal([status_reply(1, bytes([1]))])
        with pytest.raises(ModeChangeWhileTorqued):
            hal.set_operating_mode(hal.closer, reg.OperatingMode.CURRENT_CONTROL)

    def test_set_operating_mode_verify_failed(self):
        hal, _ = make_hal(
            [
                status_reply(1, bytes([0])),
                status_reply(1),
                status_reply(1, bytes([3])),  # readback disagrees
            ]
        )
        with pytest.raises(VerifyFailed):
            hal.set_operating_mode(hal.closer, reg.OperatingMode.CURRENT_CONTROL)

    @pytest.mark.parametrize("on,raw", [(True, 1), (False, 0)])
    def test_torque_writes_register(self, on, raw):
        hal, transport = make_hal([status_reply(1)])
        hal.torque(hal.closer, on)
        frame = transport.writes[0]
        assert int.from_bytes(frame[8:10], "little") == reg.TORQUE_ENABLE.address
        assert frame[10] == raw

    def test_torque_off_while_secured_warns(self):
        warnings = []
        transport = LoopbackTransport([status_reply(1)])
        hal = MotorHal(
            MotorBus(transport),
            secured_probe=lambda: True,
            on_warning=warnings.append,
        )
        hal.torque(hal.closer, False)
        assert len(warnings) == 1

    def test_write_outside_register_map_rejected(self):
        hal, transport = make_hal([])
        rogue = reg.RegisterSpec("rogue", 999, 1, reg.Access.RW)
        with pytest.raises(UnknownRegister):
            hal.bus.write_register(1, rogue, 1)
        with pytest.raises(UnknownRegister):
            hal.bus.write_register(1, reg.PRESENT_POSITION, 0)
        assert transport.writes == []

    def test_distinct_ids_required(self):
        with pytest.raises(ValueError):
            MotorHal(MotorBus(LoopbackTransport()), closer_id=1, opener_id=1)
