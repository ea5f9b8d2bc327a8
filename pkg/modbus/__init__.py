"""Modbus TCP codec, register bank, server and client."""

from modbus.bank import IllegalAddress, RegisterBank, Table, execute_request
from modbus.client import ModbusClient, client_transact
from modbus.codec import (
    ApplicationDataUnit, MbapHeader, Pdu, build_adu, decode_adu, decode_pdu, encode_adu, encode_pdu,
)
from modbus.errors import (
    DecodeError, EncodingError, IncompleteFrameError, ModbusError, ModbusExceptionResponse,
    ProtocolError, TransportError, UnsupportedFunction,
)
from modbus.server import ModbusServer
