"""Byte-exact Modbus TCP framing.

Frames are an MBAP header (transaction id, protocol id, length, unit id)
followed by the PDU, all big-endian. Only the eight function codes the
testbed speaks are understood: 0x01-0x06, 0x0F and 0x10. Any other
function code raises UnsupportedFunction; exception responses may name any
function code.
"""

import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from modbus.errors import DecodeError, EncodingError, IncompleteFrameError, ProtocolError, UnsupportedFunction

READ_COILS = 0x01
READ_DISCRETE_INPUTS = 0x02
READ_HOLDING_REGISTERS = 0x03
READ_INPUT_REGISTERS = 0x04
WRITE_SINGLE_COIL = 0x05
WRITE_SINGLE_REGISTER = 0x06
WRITE_MULTIPLE_COILS = 0x0F
WRITE_MULTIPLE_REGISTERS = 0x10

SUPPORTED_FUNCTIONS = (
    READ_COILS, READ_DISCRETE_INPUTS, READ_HOLDING_REGISTERS, READ_INPUT_REGISTERS,
    WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER, WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS,
)
BIT_READS = (READ_COILS, READ_DISCRETE_INPUTS)
REGISTER_READS = (READ_HOLDING_REGISTERS, READ_INPUT_REGISTERS)
WRITES = (WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER, WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS)

EXCEPTION_FLAG = 0x80
ILLEGAL_FUNCTION = 0x01
ILLEGAL_DATA_ADDRESS = 0x02
ILLEGAL_DATA_VALUE = 0x03
SERVER_DEVICE_FAILURE = 0x04

COIL_ON = 0xFF00
COIL_OFF = 0x0000

MAX_READ_REGISTERS = 125
MAX_READ_BITS = 2000
MAX_WRITE_REGISTERS = 123
MAX_WRITE_COILS = 1968

MBAP_SIZE = 7
MBAP = struct.Struct(">HHHB")


@dataclass(frozen=True)
class MbapHeader:
    transaction_id: int
    protocol_id: int = 0
    length: int = 0
    unit_id: int = 0


@dataclass(frozen=True)
class Pdu:
    """One request or response.

    ``values`` holds register words, raw coil words for 0x05 (0xFF00/0x0000),
    or single bits. Bit-read responses keep every bit of the packed bytes,
    padding included, so that what is decoded is exactly what was sent.
    """
    function_code: int
    address: Optional[int] = None
    count: Optional[int] = None
    values: Tuple[int, ...] = ()
    exception_code: Optional[int] = None
    response: bool = False

    @property
    def is_exception(self) -> bool:
        return bool(self.function_code & EXCEPTION_FLAG)

    @property
    def base_function(self) -> int:
        return self.function_code & ~EXCEPTION_FLAG & 0xFF

    @classmethod
    def read(cls, function_code: int, address: int, count: int) -> "Pdu":
        return cls(function_code, address=address, count=count)

    @classmethod
    def write_coil(cls, address: int, on: bool) -> "Pdu":
        return cls(WRITE_SINGLE_COIL, address=address, values=(COIL_ON if on else COIL_OFF,))

    @classmethod
    def write_register(cls, address: int, value: int) -> "Pdu":
        return cls(WRITE_SINGLE_REGISTER, address=address, values=(value,))

    @classmethod
    def write_coils(cls, address: int, bits: Sequence[int]) -> "Pdu":
        bits = tuple(np.asarray(bits, dtype=bool).astype(int).tolist())
        return cls(WRITE_MULTIPLE_COILS, address=address, count=len(bits), values=bits)

    @classmethod
    def write_registers(cls, address: int, values: Sequence[int]) -> "Pdu":
        values = tuple(int(v) for v in values)
        return cls(WRITE_MULTIPLE_REGISTERS, address=address, count=len(values), values=values)

    @classmethod
    def exception(cls, function_code: int, exception_code: int) -> "Pdu":
        return cls(function_code | EXCEPTION_FLAG, exception_code=exception_code, response=True)


@dataclass(frozen=True)
class ApplicationDataUnit:
    header: MbapHeader
    pdu: Pdu

    @property
    def size(self) -> int:
        return 6 + self.header.length


def pack_bits(bits: Sequence[int]) -> bytes:
    """Pack bits little-endian within each byte (bit 0 is the LSB of byte 0)."""
    return np.packbits(np.asarray(bits, dtype=bool), bitorder="little").tobytes()


def unpack_bits(data: bytes, count: Optional[int] = None) -> Tuple[int, ...]:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count, bitorder="little")
    return tuple(bits.tolist())


def _pack_words(values: Sequence[int]) -> bytes:
    try:
        return struct.pack(f">{len(values)}H", *values)
    except struct.error as e:
        raise EncodingError(f"register value outside 0..65535: {e}") from e


def _check_u16(value: Optional[int], what: str) -> None:
    if value is None or not 0 <= value <= 0xFFFF:
        raise EncodingError(f"{what} {value} outside 0..65535")


def _check_count(count: Optional[int], limit: int, what: str) -> int:
    if count is None or not 1 <= count <= limit:
        raise EncodingError(f"{what} count {count} outside 1..{limit}")
    return count


def encode_pdu(pdu: Pdu) -> bytes:
    """Serialize a PDU, enforcing the protocol limits."""
    fc = pdu.function_code

    if pdu.is_exception:
        if not 1 <= pdu.base_function < EXCEPTION_FLAG:
            raise EncodingError(f"bad function 0x{pdu.base_function:02X} in exception response")
        if pdu.exception_code is None or not 1 <= pdu.exception_code <= 0xFF:
            raise EncodingError(f"bad exception code {pdu.exception_code}")
        return bytes([fc, pdu.exception_code])

    if fc not in SUPPORTED_FUNCTIONS:
        raise EncodingError(f"unsupported function 0x{fc:02X}")

    if fc in BIT_READS + REGISTER_READS:
        if not pdu.response:
            limit = MAX_READ_BITS if fc in BIT_READS else MAX_READ_REGISTERS
            _check_count(pdu.count, limit, "read")
            _check_u16(pdu.address, "address")
            return struct.pack(">BHH", fc, pdu.address, pdu.count)
        if fc in BIT_READS:
            payload = pack_bits(pdu.values)
            if len(pdu.values) % 8:
                raise EncodingError("bit-read response values must fill whole bytes")
        else:
            payload = _pack_words(pdu.values)
        if not 1 <= len(payload) <= 250:
            raise EncodingError(f"response byte count {len(payload)} outside 1..250")
        return bytes([fc, len(payload)]) + payload

    _check_u16(pdu.address, "address")

    if fc in (WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER):
        if len(pdu.values) != 1:
            raise EncodingError("single write carries exactly one value")
        value = pdu.values[0]
        if fc == WRITE_SINGLE_COIL and value not in (COIL_ON, COIL_OFF):
            raise EncodingError(f"coil value 0x{value:04X} is neither 0xFF00 nor 0x0000")
        _check_u16(value, "register value")
        return struct.pack(">BHH", fc, pdu.address, value)

    limit = MAX_WRITE_COILS if fc == WRITE_MULTIPLE_COILS else MAX_WRITE_REGISTERS
    count = _check_count(pdu.count, limit, "write")
    if pdu.response:
        return struct.pack(">BHH", fc, pdu.address, count)
    if len(pdu.values) != count:
        raise EncodingError(f"write count {count} but {len(pdu.values)} values")
    if fc == WRITE_MULTIPLE_COILS:
        payload = pack_bits(pdu.values)
    else:
        payload = _pack_words(pdu.values)
    return struct.pack(">BHHB", fc, pdu.address, count, len(payload)) + payload


def decode_pdu(data: bytes, response: bool = False) -> Pdu:
    """Parse PDU bytes. Structure is checked here; value rules are the server's job."""
    if not data:
        raise DecodeError("empty PDU", data)
    fc = data[0]
    body = data[1:]

    try:
        if fc & EXCEPTION_FLAG:
            if not response or not fc & 0x7F or len(body) != 1:
                raise DecodeError(f"bad exception frame 0x{fc:02X}", data)
            return Pdu(fc, exception_code=body[0], response=True)

        if fc not in SUPPORTED_FUNCTIONS:
            raise UnsupportedFunction(fc, data)

        if fc in BIT_READS + REGISTER_READS:
            if not response:
                if len(body) != 4:
                    raise DecodeError("read request body must be 4 bytes", data)
                address, count = struct.unpack(">HH", body)
                return Pdu(fc, address=address, count=count)
            byte_count = body[0]
            payload = body[1:]
            if byte_count != len(payload):
                raise DecodeError(f"byte count {byte_count} but {len(payload)} bytes follow", data)
            if fc in BIT_READS:
                return Pdu(fc, values=unpack_bits(payload), response=True)
            if byte_count % 2:
                raise DecodeError("odd register byte count", data)
            return Pdu(fc, values=struct.unpack(f">{byte_count // 2}H", payload), response=True)

        if fc in (WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER):
            if len(body) != 4:
                raise DecodeError("single write body must be 4 bytes", data)
            address, value = struct.unpack(">HH", body)
            return Pdu(fc, address=address, values=(value,), response=response)

        if response:
            if len(body) != 4:
                raise DecodeError("multiple write response body must be 4 bytes", data)
            address, count = struct.unpack(">HH", body)
            return Pdu(fc, address=address, count=count, response=True)

        if len(body) < 5:
            raise DecodeError("multiple write request too short", data)
        address, count, byte_count = struct.unpack(">HHB", body[:5])
        payload = body[5:]
        if byte_count != len(payload):
            raise DecodeError(f"byte count {byte_count} but {len(payload)} bytes follow", data)
        if fc == WRITE_MULTIPLE_COILS:
            if byte_count != (count + 7) // 8:
                raise DecodeError(f"{count} coils do not fit {byte_count} bytes", data)
            return Pdu(fc, address=address, count=count, values=unpack_bits(payload, count))
        if byte_count != 2 * count:
            raise DecodeError(f"{count} registers do not fit {byte_count} bytes", data)
        return Pdu(fc, address=address, count=count, values=struct.unpack(f">{count}H", payload))
    except struct.error as e:
        raise DecodeError(f"malformed PDU: {e}", data) from e


def encode_adu(header: MbapHeader, pdu: Pdu) -> bytes:
    """MBAP header followed by the PDU; the length field is always recomputed."""
    if header.protocol_id != 0:
        raise EncodingError(f"protocol id must be 0, got {header.protocol_id}")
    _check_u16(header.transaction_id, "transaction id")
    if not 0 <= header.unit_id <= 0xFF:
        raise EncodingError(f"unit id {header.unit_id} outside 0..255")
    body = encode_pdu(pdu)
    return MBAP.pack(header.transaction_id, 0, len(body) + 1, header.unit_id) + body


def frame_size(data: bytes) -> int:
    """Total size of the frame starting at ``data[0]``, or raise IncompleteFrameError."""
    if len(data) < MBAP_SIZE:
        raise IncompleteFrameError(MBAP_SIZE - len(data), header_complete=False, raw=data)
    _, protocol_id, length, _ = MBAP.unpack_from(data)
    if protocol_id != 0:
        raise ProtocolError(f"protocol id {protocol_id} is not Modbus")
    if length < 2:
        raise ProtocolError(f"length field {length} leaves no room for a PDU")
    return 6 + length


def decode_adu(data: bytes, response: bool = False) -> ApplicationDataUnit:
    """Inverse of encode_adu for the first frame in ``data``.

    Short input raises IncompleteFrameError with the exact number of bytes
    still missing: first up to the 7-byte header, then up to the length field.
    """
    total = frame_size(data)
    if len(data) < total:
        raise IncompleteFrameError(total - len(data), header_complete=True, raw=data)
    transaction_id, protocol_id, length, unit_id = MBAP.unpack_from(data)
    pdu = decode_pdu(bytes(data[MBAP_SIZE:total]), response=response)
    return ApplicationDataUnit(MbapHeader(transaction_id, protocol_id, length, unit_id), pdu)


def build_adu(transaction_id: int, unit_id: int, pdu: Pdu) -> ApplicationDataUnit:
    """ADU with a consistent length field, for callers that start from a PDU."""
    length = len(encode_pdu(pdu)) + 1
    return ApplicationDataUnit(MbapHeader(transaction_id, 0, length, unit_id), pdu)
