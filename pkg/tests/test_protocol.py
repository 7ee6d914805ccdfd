import random

import pytest

from solartel import protocol
from solartel.controller import ControllerSim, RegisterMap, snapshot
from solartel.modbus import DeviceAddress
from solartel.plant import PlantState
from solartel.protocol import (
    FakeLink,
    LinkConfig,
    ModbusLink,
    ProtocolError,
    Timeout,
    poll,
)

REGS = RegisterMap((1280, 1721, 450, 120, 0, 3400))


def modbus_link(**sim_kwargs):
    cfg = LinkConfig()
    sim = ControllerSim(**sim_kwargs)
    sim.update(REGS)
    return ModbusLink(sim, cfg), cfg


class TestPoll:
    def test_conversion(self):
        link, cfg = modbus_link()
        reading = poll(link, cfg, now=120.0)
        assert reading.battery_voltage == pytest.approx(12.80)
        assert reading.source_voltage == pytest.approx(17.21)
        assert reading.charge_current == pytest.approx(4.50)
        assert reading.load_current == pytest.approx(1.20)
        assert reading.total_energy == pytest.approx(3.4)
        assert reading.polled_at == 120.0

    def test_all_zero(self):
        link = FakeLink(RegisterMap())
        reading = poll(link, LinkConfig(), now=0.0)
        assert reading.battery_voltage == 0.0
        assert reading.total_energy == 0.0

    def test_timeout_after_budget_exhausted(self):
        link, cfg = modbus_link(drop_rate=1.0)
        with pytest.raises(Timeout):
            poll(link, cfg, now=0.0)
        assert link.requests_sent == cfg.max_retries + 1

    def test_no_extra_requests_after_success(self):
        link, cfg = modbus_link()
        poll(link, cfg, now=0.0)
        assert link.requests_sent == 1

    def test_corrupt_responses_raise_protocol_error(self):
        link, cfg = modbus_link(corrupt_rate=1.0, seed=3)
        with pytest.raises(ProtocolError):
            poll(link, cfg, now=0.0)
        assert link.requests_sent == cfg.max_retries + 1

    def test_slow_slave_times_out(self):
        link, cfg = modbus_link(latency_ms=900)
        with pytest.raises(Timeout):
            poll(link, cfg, now=0.0)

    def test_retry_recovers_from_transient_drops(self):
        # seed chosen so the first response drops but a later one survives
        sim = ControllerSim(drop_rate=0.5, seed=1)
        sim.update(REGS)
        link = ModbusLink(sim, LinkConfig())
        reading = poll(link, LinkConfig(), now=0.0)
        assert reading.battery_voltage == pytest.approx(12.80)
        assert 1 <= link.requests_sent <= 4

    def test_wrong_device_times_out(self):
        sim = ControllerSim(device=DeviceAddress(2))
        sim.update(REGS)
        cfg = LinkConfig()  # asks device 1
        link = ModbusLink(sim, cfg)
        with pytest.raises(Timeout):
            poll(link, cfg, now=0.0)


class TestAccessors:
    def test_projection(self):
        link, cfg = modbus_link()
        reading = poll(link, cfg, now=0.0)
        assert protocol.get_battery_voltage(reading) == pytest.approx(12.80)
        assert protocol.get_source_voltage(reading) == pytest.approx(17.21)
        assert protocol.get_charge_current(reading) == pytest.approx(4.50)
        assert protocol.get_load_current(reading) == pytest.approx(1.20)
        assert protocol.get_total_kwh(reading) == pytest.approx(3.4)

    def test_zero_reading(self):
        reading = poll(FakeLink(RegisterMap()), LinkConfig(), now=0.0)
        for getter in (
            protocol.get_battery_voltage,
            protocol.get_source_voltage,
            protocol.get_charge_current,
            protocol.get_load_current,
            protocol.get_total_kwh,
        ):
            assert getter(reading) == 0.0


class TestTransportOpacity:
    def test_fake_and_modbus_links_agree(self):
        modbus_backed, cfg = modbus_link()
        fake = FakeLink(REGS)
        a = poll(modbus_backed, cfg, now=5.0)
        b = poll(fake, cfg, now=5.0)
        assert a == b

    def test_scaling_round_trip_quantization(self):
        rng = random.Random(77)
        for _ in range(200):
            state = PlantState(
                t=0.0,
                soc=0.5,
                battery_voltage=rng.uniform(0, 15),
                array_voltage=rng.uniform(0, 20),
                charge_current=rng.uniform(0, 60),
                load_current=rng.uniform(0, 60),
                cumulative_energy=rng.uniform(0, 1e6),
                stage="BULK",
                stage_entered_at=0.0,
            )
            reading = poll(FakeLink(snapshot(state)), LinkConfig(), now=0.0)
            assert abs(reading.battery_voltage - state.battery_voltage) <= 0.005
            assert abs(reading.source_voltage - state.array_voltage) <= 0.005
            assert abs(reading.charge_current - state.charge_current) <= 0.005
            assert abs(reading.load_current - state.load_current) <= 0.005
            assert abs(reading.total_energy * 1000 - state.cumulative_energy) <= 0.5
