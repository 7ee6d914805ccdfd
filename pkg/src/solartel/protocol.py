"""Controller transfer protocol: physical-quantity getters over an opaque link.

The calling logic never sees Modbus. A link only has to produce the six
telemetry registers on request; poll() adds the retry budget and converts
the fixed-point register values back to volts, amps and kWh. Swapping the
Modbus-backed link for the in-memory fake changes nothing upstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import modbus
from .controller import REGISTER_COUNT, ControllerSim, RegisterMap
from .modbus import DeviceAddress, ExceptionResponse


class LinkError(Exception):
    pass


class Timeout(LinkError):
    pass


class ProtocolError(LinkError):
    pass


@dataclass(frozen=True)
class LinkConfig:
    device: DeviceAddress = DeviceAddress(1)
    response_timeout_ms: int = 500
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.response_timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ControllerReading:
    battery_voltage: float
    source_voltage: float
    charge_current: float
    load_current: float
    total_energy: float  # kWh
    polled_at: float


class ControllerLink:
    """One read attempt against whatever transport backs the controller."""

    def attempt_read(self, start: int, count: int) -> tuple[int, ...]:
        raise NotImplementedError


class ModbusLink(ControllerLink):
    """Link over the simulated message-oriented serial channel."""

    def __init__(self, slave: ControllerSim, cfg: LinkConfig):
        self.slave = slave
        self.cfg = cfg
        self.requests_sent = 0

    def attempt_read(self, start: int, count: int) -> tuple[int, ...]:
        request = modbus.encode_read_request(
            modbus.ReadRequest(self.cfg.device, start, count)
        )
        self.requests_sent += 1
        reply, latency = self.slave.respond(request)
        if reply is None or latency > self.cfg.response_timeout_ms:
            raise Timeout("no response within timeout")
        try:
            decoded = modbus.decode_read_response(reply, count)
        except modbus.ModbusError as exc:
            raise ProtocolError(str(exc)) from exc
        if isinstance(decoded, ExceptionResponse):
            raise ProtocolError(f"slave exception code {decoded.exception_code}")
        return decoded


class FakeLink(ControllerLink):
    """In-memory transport returning configured register values directly."""

    def __init__(self, regs: RegisterMap):
        self.regs = regs
        self.requests_sent = 0

    def attempt_read(self, start: int, count: int) -> tuple[int, ...]:
        self.requests_sent += 1
        return self.regs.span(start, count)


def poll(link: ControllerLink, cfg: LinkConfig, now: float) -> ControllerReading:
    """One batched read of registers 0..5, retried to the configured budget."""
    last_error: LinkError = Timeout("no attempt made")
    for _ in range(cfg.max_retries + 1):
        try:
            regs = link.attempt_read(0, REGISTER_COUNT)
        except LinkError as exc:
            last_error = exc
            continue
        return ControllerReading(
            battery_voltage=regs[0] / 100.0,
            source_voltage=regs[1] / 100.0,
            charge_current=regs[2] / 100.0,
            load_current=regs[3] / 100.0,
            total_energy=((regs[4] << 16) | regs[5]) / 1000.0,
            polled_at=now,
        )
    raise last_error


def get_battery_voltage(reading: ControllerReading) -> float:
    return reading.battery_voltage


def get_source_voltage(reading: ControllerReading) -> float:
    return reading.source_voltage


def get_charge_current(reading: ControllerReading) -> float:
    return reading.charge_current


def get_load_current(reading: ControllerReading) -> float:
    return reading.load_current


def get_total_kwh(reading: ControllerReading) -> float:
    return reading.total_energy
