"""Exceptions raised by the Modbus codec, client and server."""

from typing import Optional


class ModbusError(Exception):
    """Base class for every Modbus failure."""


class EncodingError(ModbusError):
    """A PDU violates the protocol limits and cannot be put on the wire."""


class DecodeError(ModbusError):
    """Bytes that do not form a supported Modbus frame."""

    def __init__(self, message: str, raw: bytes = b""):
        super().__init__(message)
        self.raw = bytes(raw)


class UnsupportedFunction(DecodeError):
    """A frame whose function code the testbed does not implement."""

    def __init__(self, function_code: int, raw: bytes = b""):
        super().__init__(f"unknown function code 0x{function_code:02X}", raw)
        self.function_code = function_code


class IncompleteFrameError(DecodeError):
    """Not enough bytes yet; ``missing`` is the exact deficit known so far."""

    def __init__(self, missing: int, header_complete: bool, raw: bytes = b""):
        stage = "body" if header_complete else "header"
        super().__init__(f"need {missing} more bytes ({stage})", raw)
        self.missing = missing
        self.header_complete = header_complete


class ProtocolError(ModbusError):
    """Well-formed bytes that break MBAP rules or transaction matching."""


class TransportError(ModbusError):
    """Connection refused, closed or timed out."""


class ModbusExceptionResponse(ModbusError):
    """The server answered with an exception PDU."""

    def __init__(self, function_code: int, exception_code: int, message: Optional[str] = None):
        super().__init__(
            message or f"function 0x{function_code:02X} failed with exception 0x{exception_code:02X}"
        )
        self.function_code = function_code
        self.exception_code = exception_code
