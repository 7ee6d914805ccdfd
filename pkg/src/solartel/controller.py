"""Simulated charge controller: plant snapshot registers plus a Modbus slave.

Register map (16-bit holding registers, decimal fixed point):

    0  battery voltage, centivolts
    1  power-source (array) voltage, centivolts
    2  charge current, centiamps
    3  load current, centiamps
    4  total energy, watt-hours, high word
    5  total energy, watt-hours, low word

Values saturate at the type bounds rather than wrapping. The slave answers
only Read Holding Registers; anything else gets an illegal-function
exception, reads past register 5 an illegal-address exception, and frames
that fail CRC or carry another device's address get silence, as a real
Modbus slave would.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import modbus
from .modbus import DeviceAddress
from .plant import PlantState

REGISTER_COUNT = 6
_ENERGY_MAX = 2**32 - 1


@dataclass(frozen=True)
class RegisterMap:
    regs: tuple[int, int, int, int, int, int] = (0, 0, 0, 0, 0, 0)

    def __getitem__(self, index: int) -> int:
        return self.regs[index]

    def span(self, start: int, count: int) -> tuple[int, ...]:
        return self.regs[start : start + count]

    @property
    def energy_wh(self) -> int:
        return (self.regs[4] << 16) | self.regs[5]


def _clamp16(value: float) -> int:
    return min(0xFFFF, max(0, round(value)))


def snapshot(state: PlantState) -> RegisterMap:
    """Freeze the monitored plant quantities into the register map."""
    energy = min(_ENERGY_MAX, max(0, round(state.cumulative_energy)))
    return RegisterMap(
        (
            _clamp16(state.battery_voltage * 100),
            _clamp16(state.array_voltage * 100),
            _clamp16(state.charge_current * 100),
            _clamp16(state.load_current * 100),
            energy >> 16,
            energy & 0xFFFF,
        )
    )


def service(frame: bytes, regs: RegisterMap, device: DeviceAddress = DeviceAddress(1)) -> bytes | None:
    """Slave-side handling of one wire frame; None means silence."""
    try:
        body = modbus.check_crc(frame)
    except modbus.ModbusError:
        return None
    if not body or body[0] != device.value:
        return None
    if len(body) != 6:
        return None
    if body[1] != modbus.FUNC_READ_HOLDING:
        return modbus.encode_exception(device, modbus.EXC_ILLEGAL_FUNCTION)
    start = (body[2] << 8) | body[3]
    count = (body[4] << 8) | body[5]
    if count < 1 or count > modbus.MAX_READ_COUNT:
        return modbus.encode_exception(device, modbus.EXC_ILLEGAL_VALUE)
    if start + count > REGISTER_COUNT:
        return modbus.encode_exception(device, modbus.EXC_ILLEGAL_ADDRESS)
    return modbus.encode_read_response(device, list(regs.span(start, count)))


class ControllerSim:
    """A serviceable controller: current registers, response latency, faults.

    drop_rate and corrupt_rate make the slave lose or damage that fraction
    of its responses (seeded), which is what drives the master's retry path.
    """

    def __init__(
        self,
        device: DeviceAddress = DeviceAddress(1),
        latency_ms: int = 50,
        drop_rate: float = 0.0,
        corrupt_rate: float = 0.0,
        seed: int = 0,
    ):
        self.device = device
        self.latency_ms = latency_ms
        self.drop_rate = drop_rate
        self.corrupt_rate = corrupt_rate
        self.registers = RegisterMap()
        self._rng = random.Random(seed)

    def update(self, regs: RegisterMap) -> None:
        self.registers = regs

    def respond(self, frame: bytes) -> tuple[bytes | None, int]:
        """(response or None, simulated latency in ms) for one request."""
        reply = service(frame, self.registers, self.device)
        if reply is None:
            return None, self.latency_ms
        if self.drop_rate and self._rng.random() < self.drop_rate:
            return None, self.latency_ms
        if self.corrupt_rate and self._rng.random() < self.corrupt_rate:
            damaged = bytearray(reply)
            pos = self._rng.randrange(len(damaged))
            damaged[pos] ^= 1 << self._rng.randrange(8)
            reply = bytes(damaged)
        return reply, self.latency_ms
