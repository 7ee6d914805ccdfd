import pytest

from solartel import controller, modbus
from solartel.controller import ControllerSim, RegisterMap, snapshot
from solartel.modbus import DeviceAddress, ExceptionResponse, ReadRequest
from solartel.plant import PlantState


def make_state(**kw):
    defaults = dict(
        t=0.0, soc=0.5, battery_voltage=12.80, array_voltage=17.21,
        charge_current=4.50, load_current=1.20, cumulative_energy=1234.0,
        stage="BULK", stage_entered_at=0.0,
    )
    defaults.update(kw)
    return PlantState(**defaults)


class TestSnapshot:
    def test_centivolt_scaling(self):
        regs = snapshot(make_state())
        assert regs[0] == 1280
        assert regs[1] == 1721
        assert regs[2] == 450
        assert regs[3] == 120

    def test_all_zero_state(self):
        state = make_state(battery_voltage=0, array_voltage=0, charge_current=0,
                           load_current=0, cumulative_energy=0)
        assert snapshot(state).regs == (0, 0, 0, 0, 0, 0)

    def test_energy_32bit_split(self):
        regs = snapshot(make_state(cumulative_energy=1234.0))
        assert (regs[4], regs[5]) == (0, 1234)
        assert regs.energy_wh == 1234

    def test_energy_high_word(self):
        regs = snapshot(make_state(cumulative_energy=70000.0))
        assert regs.energy_wh == 70000
        assert regs[4] == 1

    def test_saturation(self):
        state = make_state(battery_voltage=700.0, cumulative_energy=2.0**33)
        regs = snapshot(state)
        assert regs[0] == 65535
        assert regs.energy_wh == 2**32 - 1

    def test_negative_clamps_to_zero(self):
        regs = snapshot(make_state(battery_voltage=-0.4))
        assert regs[0] == 0


def request_frame(start, count, device=1):
    return modbus.encode_read_request(ReadRequest(DeviceAddress(device), start, count))


class TestService:
    def setup_method(self):
        self.regs = snapshot(make_state())

    def test_full_read(self):
        reply = controller.service(request_frame(0, 6), self.regs)
        assert modbus.decode_read_response(reply, 6) == (1280, 1721, 450, 120, 0, 1234)

    def test_exhaustive_valid_spans(self):
        for start in range(6):
            for count in range(1, 7 - start):
                reply = controller.service(request_frame(start, count), self.regs)
                values = modbus.decode_read_response(reply, count)
                assert values == self.regs.span(start, count)

    def test_read_past_map_is_illegal_address(self):
        reply = controller.service(request_frame(100, 1), self.regs)
        decoded = modbus.decode_read_response(reply, 1)
        assert isinstance(decoded, ExceptionResponse)
        assert decoded.exception_code == 2

    def test_partially_out_of_range_rejected_whole(self):
        reply = controller.service(request_frame(4, 3), self.regs)
        decoded = modbus.decode_read_response(reply, 3)
        assert isinstance(decoded, ExceptionResponse)
        assert decoded.exception_code == 2

    def test_unknown_function_is_illegal_function(self):
        body = bytes([1, 0x06, 0, 0, 0, 1])
        reply = controller.service(modbus.append_crc(body), self.regs)
        decoded = modbus.decode_read_response(reply, 1)
        assert isinstance(decoded, ExceptionResponse)
        assert decoded.exception_code == 1

    def test_corrupted_crc_gets_silence(self):
        frame = bytearray(request_frame(0, 6))
        frame[-1] ^= 0xFF
        assert controller.service(bytes(frame), self.regs) is None

    def test_other_device_gets_silence(self):
        assert controller.service(request_frame(0, 6, device=9), self.regs) is None

    def test_replies_always_pass_crc(self):
        for start in range(6):
            reply = controller.service(request_frame(start, 1), self.regs)
            modbus.check_crc(reply)  # raises on a bad frame
        exc_reply = controller.service(request_frame(100, 1), self.regs)
        modbus.check_crc(exc_reply)


class TestControllerSim:
    def test_update_and_respond(self):
        sim = ControllerSim()
        sim.update(snapshot(make_state()))
        reply, latency = sim.respond(request_frame(0, 6))
        assert latency == 50
        assert modbus.decode_read_response(reply, 6)[0] == 1280

    def test_drop_all(self):
        sim = ControllerSim(drop_rate=1.0)
        sim.update(snapshot(make_state()))
        reply, _ = sim.respond(request_frame(0, 6))
        assert reply is None

    def test_corrupt_all_fails_crc(self):
        sim = ControllerSim(corrupt_rate=1.0, seed=5)
        sim.update(snapshot(make_state()))
        reply, _ = sim.respond(request_frame(0, 6))
        assert reply is not None
        with pytest.raises(modbus.ModbusError):
            modbus.check_crc(reply)

    def test_fault_sequence_is_seeded(self):
        outcomes = []
        for _ in range(2):
            sim = ControllerSim(drop_rate=0.5, seed=42)
            sim.update(snapshot(make_state()))
            outcomes.append(
                [sim.respond(request_frame(0, 6))[0] is None for _ in range(50)]
            )
        assert outcomes[0] == outcomes[1]
