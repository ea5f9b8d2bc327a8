"""Register storage served by a Modbus listener and the request executor."""

import logging
import threading
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Sequence

from modbus.codec import (
    BIT_READS, COIL_OFF, COIL_ON, ILLEGAL_DATA_ADDRESS, ILLEGAL_DATA_VALUE, ILLEGAL_FUNCTION,
    MAX_READ_BITS, MAX_READ_REGISTERS, MAX_WRITE_COILS, MAX_WRITE_REGISTERS,
    READ_COILS, READ_DISCRETE_INPUTS, READ_HOLDING_REGISTERS, READ_INPUT_REGISTERS,
    WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS, WRITE_SINGLE_COIL, WRITE_SINGLE_REGISTER,
    Pdu,
)

logger = logging.getLogger(__name__)


class Table(str, Enum):
    COILS = "coils"
    DISCRETE_INPUTS = "discrete_inputs"
    HOLDING_REGISTERS = "holding_registers"
    INPUT_REGISTERS = "input_registers"

    @property
    def is_bit(self) -> bool:
        return self in (Table.COILS, Table.DISCRETE_INPUTS)

    @property
    def is_sensor(self) -> bool:
        """Tables a plant publishes measurements in; the other two carry commands."""
        return self in (Table.DISCRETE_INPUTS, Table.INPUT_REGISTERS)


READ_TABLE = {
    READ_COILS: Table.COILS,
    READ_DISCRETE_INPUTS: Table.DISCRETE_INPUTS,
    READ_HOLDING_REGISTERS: Table.HOLDING_REGISTERS,
    READ_INPUT_REGISTERS: Table.INPUT_REGISTERS,
}
WRITE_TABLE = {
    WRITE_SINGLE_COIL: Table.COILS,
    WRITE_MULTIPLE_COILS: Table.COILS,
    WRITE_SINGLE_REGISTER: Table.HOLDING_REGISTERS,
    WRITE_MULTIPLE_REGISTERS: Table.HOLDING_REGISTERS,
}


class IllegalAddress(LookupError):
    """Access to an address the bank does not map."""


class RegisterBank:
    """Addressed 16-bit registers and 1-bit points behind one listener.

    Only defined addresses exist; everything else answers ILLEGAL DATA ADDRESS.
    A lock makes every multi-point read or write atomic with respect to others.
    """

    def __init__(self, layout: Mapping[Table, Iterable[int]] = None):
        self._tables: Dict[Table, Dict[int, int]] = {table: {} for table in Table}
        self._lock = threading.RLock()
        for table, addresses in (layout or {}).items():
            for address in addresses:
                self.define(Table(table), address)

    def define(self, table: Table, address: int, value: int = 0) -> None:
        with self._lock:
            self._tables[table][address] = self._coerce(table, value)

    def addresses(self, table: Table) -> List[int]:
        return sorted(self._tables[table])

    def read(self, table: Table, address: int, count: int = 1) -> List[int]:
        with self._lock:
            store = self._tables[table]
            try:
                return [store[a] for a in range(address, address + count)]
            except KeyError as e:
                raise IllegalAddress(f"{table.value}[{e.args[0]}] is not mapped") from None

    def write(self, table: Table, address: int, values: Sequence[int]) -> None:
        with self._lock:
            store = self._tables[table]
            span = range(address, address + len(values))
            missing = [a for a in span if a not in store]
            if missing:
                raise IllegalAddress(f"{table.value}[{missing[0]}] is not mapped")
            for a, v in zip(span, values):
                store[a] = self._coerce(table, v)

    def update(self, writes: Mapping[Table, Mapping[int, int]]) -> None:
        """Apply several tables' writes as one atomic step (used by plants and the PLC)."""
        with self._lock:
            for table, points in writes.items():
                for address, value in points.items():
                    if address not in self._tables[table]:
                        raise IllegalAddress(f"{table.value}[{address}] is not mapped")
            for table, points in writes.items():
                for address, value in points.items():
                    self._tables[table][address] = self._coerce(table, value)

    def snapshot(self) -> Dict[Table, Dict[int, int]]:
        with self._lock:
            return {table: dict(store) for table, store in self._tables.items()}

    @staticmethod
    def _coerce(table: Table, value: int) -> int:
        value = int(value)
        if table.is_bit:
            return 1 if value else 0
        if not 0 <= value <= 0xFFFF:
            raise ValueError(f"register value {value} outside 0..65535")
        return value


def execute_request(bank: RegisterBank, pdu: Pdu) -> Pdu:
    """Run one request against the bank and build the response PDU.

    Every response carries the request's function code, or that code with
    the exception bit set.
    """
    fc = pdu.function_code
    try:
        if fc in READ_TABLE:
            limit = MAX_READ_BITS if fc in BIT_READS else MAX_READ_REGISTERS
            if pdu.count is None or not 1 <= pdu.count <= limit:
                return Pdu.exception(fc, ILLEGAL_DATA_VALUE)
            values = bank.read(READ_TABLE[fc], pdu.address, pdu.count)
            if fc in BIT_READS:
                values = values + [0] * (-len(values) % 8)
            return Pdu(fc, values=tuple(values), response=True)

        if fc == WRITE_SINGLE_COIL:
            raw = pdu.values[0] if len(pdu.values) == 1 else None
            if raw not in (COIL_ON, COIL_OFF):
                return Pdu.exception(fc, ILLEGAL_DATA_VALUE)
            bank.write(Table.COILS, pdu.address, [1 if raw == COIL_ON else 0])
            return Pdu(fc, address=pdu.address, values=(raw,), response=True)

        if fc == WRITE_SINGLE_REGISTER:
            if len(pdu.values) != 1 or not 0 <= pdu.values[0] <= 0xFFFF:
                return Pdu.exception(fc, ILLEGAL_DATA_VALUE)
            bank.write(Table.HOLDING_REGISTERS, pdu.address, list(pdu.values))
            return Pdu(fc, address=pdu.address, values=pdu.values, response=True)

        if fc in (WRITE_MULTIPLE_COILS, WRITE_MULTIPLE_REGISTERS):
            limit = MAX_WRITE_COILS if fc == WRITE_MULTIPLE_COILS else MAX_WRITE_REGISTERS
            if pdu.count is None or not 1 <= pdu.count <= limit or len(pdu.values) != pdu.count:
                return Pdu.exception(fc, ILLEGAL_DATA_VALUE)
            bank.write(WRITE_TABLE[fc], pdu.address, list(pdu.values))
            return Pdu(fc, address=pdu.address, count=pdu.count, response=True)

        return Pdu.exception(fc, ILLEGAL_FUNCTION)

    except IllegalAddress as e:
        logger.debug(f"Request 0x{fc:02X} rejected: {e}")
        return Pdu.exception(fc, ILLEGAL_DATA_ADDRESS)
    except ValueError as e:
        logger.debug(f"Request 0x{fc:02X} rejected: {e}")
        return Pdu.exception(fc, ILLEGAL_DATA_VALUE)
