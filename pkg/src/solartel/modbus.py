"""Modbus RTU framing for the Read Holding Registers function (0x03).

Master and slave sides of the only transaction the monitor needs: a point
to point read of consecutive 16-bit holding registers, protected by the
standard Modbus CRC-16 (init 0xFFFF, reflected polynomial 0xA001, CRC
transmitted low byte first). The simulated serial channel is message
oriented, so there is no silent-interval frame delimiting here; a frame is
exactly one bytes object.
"""

from __future__ import annotations

from dataclasses import dataclass

FUNC_READ_HOLDING = 0x03
FUNC_ERROR_FLAG = 0x80

EXC_ILLEGAL_FUNCTION = 1
EXC_ILLEGAL_ADDRESS = 2
EXC_ILLEGAL_VALUE = 3
_VALID_EXCEPTION_CODES = (EXC_ILLEGAL_FUNCTION, EXC_ILLEGAL_ADDRESS, EXC_ILLEGAL_VALUE)

MAX_READ_COUNT = 125


class ModbusError(Exception):
    """Base class for framing errors."""


class InvalidAddress(ModbusError):
    pass


class InvalidCount(ModbusError):
    pass


class CrcMismatch(ModbusError):
    pass


class MalformedFrame(ModbusError):
    pass


class UnsupportedFunction(ModbusError):
    pass


class CountMismatch(ModbusError):
    pass


def _crc16_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            lsb = crc & 1
            crc >>= 1
            if lsb:
                crc ^= 0xA001
        table.append(crc)
    return table


_CRC_TABLE = _crc16_table()


def crc16(data: bytes) -> int:
    """Modbus CRC-16 over ``data``. Empty input yields the 0xFFFF init value."""
    crc = 0xFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


def append_crc(body: bytes) -> bytes:
    crc = crc16(body)
    return body + bytes([crc & 0xFF, crc >> 8])


def check_crc(frame: bytes) -> bytes:
    """Validate the trailing CRC and return the frame body without it."""
    if len(frame) < 4:
        raise MalformedFrame(f"frame too short: {len(frame)} bytes")
    body, tail = frame[:-2], frame[-2:]
    expected = crc16(body)
    received = tail[0] | (tail[1] << 8)
    if received != expected:
        raise CrcMismatch(f"crc {received:#06x} != computed {expected:#06x}")
    return body


@dataclass(frozen=True)
class DeviceAddress:
    """Slave address on the point-to-point link. Broadcast (0) unsupported."""

    value: int

    def __post_init__(self) -> None:
        if not 1 <= self.value <= 247:
            raise InvalidAddress(f"device address {self.value} outside 1..247")


@dataclass(frozen=True)
class ReadRequest:
    device: DeviceAddress
    start: int
    count: int

    def __post_init__(self) -> None:
        if not 0 <= self.start <= 0xFFFF:
            raise InvalidAddress(f"start register {self.start} outside 0..65535")
        if not 1 <= self.count <= MAX_READ_COUNT:
            raise InvalidCount(f"count {self.count} outside 1..{MAX_READ_COUNT}")
        if self.start + self.count > 0x10000:
            raise InvalidAddress("read span past register 65535")


@dataclass(frozen=True)
class ReadResponse:
    device: DeviceAddress
    values: tuple[int, ...]


@dataclass(frozen=True)
class ExceptionResponse:
    device: DeviceAddress
    exception_code: int

    def __post_init__(self) -> None:
        if self.exception_code not in _VALID_EXCEPTION_CODES:
            raise ModbusError(f"exception code {self.exception_code} not in {_VALID_EXCEPTION_CODES}")


def encode_read_request(req: ReadRequest) -> bytes:
    body = bytes(
        [
            req.device.value,
            FUNC_READ_HOLDING,
            req.start >> 8,
            req.start & 0xFF,
            req.count >> 8,
            req.count & 0xFF,
        ]
    )
    return append_crc(body)


def decode_read_request(frame: bytes) -> ReadRequest:
    body = check_crc(frame)
    if len(body) != 6:
        raise MalformedFrame(f"request body {len(body)} bytes, expected 6")
    if body[1] != FUNC_READ_HOLDING:
        raise UnsupportedFunction(f"function {body[1]:#04x}, only 0x03 supported")
    start = (body[2] << 8) | body[3]
    count = (body[4] << 8) | body[5]
    return ReadRequest(DeviceAddress(body[0]), start, count)


def encode_read_response(device: DeviceAddress, values: list[int] | tuple[int, ...]) -> bytes:
    if not 1 <= len(values) <= MAX_READ_COUNT:
        raise InvalidCount(f"{len(values)} registers outside 1..{MAX_READ_COUNT}")
    body = bytearray([device.value, FUNC_READ_HOLDING, 2 * len(values)])
    for v in values:
        if not 0 <= v <= 0xFFFF:
            raise MalformedFrame(f"register value {v} outside 0..65535")
        body.append(v >> 8)
        body.append(v & 0xFF)
    return append_crc(bytes(body))


def encode_exception(device: DeviceAddress, code: int) -> bytes:
    resp = ExceptionResponse(device, code)  # validates the code
    body = bytes([resp.device.value, FUNC_READ_HOLDING | FUNC_ERROR_FLAG, resp.exception_code])
    return append_crc(body)


def decode_read_response(frame: bytes, expected_count: int) -> tuple[int, ...] | ExceptionResponse:
    """Decode a master-side response; exception frames come back as values.

    Returns the register tuple for a normal response, or an
    ExceptionResponse when the slave answered with function 0x83.
    """
    if not 1 <= expected_count <= MAX_READ_COUNT:
        raise InvalidCount(f"expected_count {expected_count} outside 1..{MAX_READ_COUNT}")
    body = check_crc(frame)
    if len(body) < 3:
        raise MalformedFrame("response body shorter than 3 bytes")
    function = body[1]
    if function == FUNC_READ_HOLDING | FUNC_ERROR_FLAG:
        if len(body) != 3:
            raise MalformedFrame("exception body must be 3 bytes")
        return ExceptionResponse(DeviceAddress(body[0]), body[2])
    if function != FUNC_READ_HOLDING:
        raise UnsupportedFunction(f"function {function:#04x}")
    byte_count = body[2]
    if byte_count != len(body) - 3 or byte_count % 2:
        raise MalformedFrame(f"byte count {byte_count} disagrees with body length {len(body)}")
    if byte_count != 2 * expected_count:
        raise CountMismatch(f"byte count {byte_count}, expected {2 * expected_count}")
    values = tuple((body[3 + 2 * i] << 8) | body[4 + 2 * i] for i in range(expected_count))
    return values
