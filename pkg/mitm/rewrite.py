"""
In-flight rewriting of decoded Modbus frames.

Sensor rules rewrite read responses on their way to the PLC; the request
that asked for them supplies the start address. Actuator rules rewrite
write requests on their way to the plant. Everything else passes as is.
"""

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from modbus.bank import READ_TABLE, WRITE_TABLE, Table
from modbus.codec import COIL_OFF, COIL_ON, WRITE_SINGLE_COIL, ApplicationDataUnit, Pdu
from mitm.scenario import Direction, SpoofRule


@dataclass(frozen=True)
class Rewrite:
    """One changed value inside one frame."""
    point: str
    function_code: int
    table: Table
    address: int
    before: int
    after: int


def _addressed(pdu: Pdu, direction: Direction, request: Optional[Pdu]) -> Optional[Tuple[Table, int, int]]:
    """(table, start address, number of meaningful values) a frame carries, if any."""
    if pdu.is_exception:
        return None
    if direction is Direction.SENSOR:
        if not pdu.response or pdu.function_code not in READ_TABLE:
            return None
        if request is None or request.function_code != pdu.function_code:
            return None
        return READ_TABLE[pdu.function_code], request.address, min(request.count, len(pdu.values))
    if pdu.response or pdu.function_code not in WRITE_TABLE:
        return None
    return WRITE_TABLE[pdu.function_code], pdu.address, len(pdu.values)


def _decode_value(function_code: int, raw: int) -> int:
    if function_code == WRITE_SINGLE_COIL:
        return 1 if raw == COIL_ON else 0
    return raw


def _encode_value(function_code: int, value: int) -> int:
    if function_code == WRITE_SINGLE_COIL:
        return COIL_ON if value else COIL_OFF
    return value


def rewrite_frame(adu: ApplicationDataUnit, rules: Sequence[SpoofRule], direction: Direction, t: float,
                  request: Optional[Pdu] = None) -> Tuple[ApplicationDataUnit, List[Rewrite]]:
    """Apply every active rule of ``direction`` to the values the frame addresses.

    Returns the input object unchanged when no value changed, so callers can
    forward the original bytes.
    """
    active = [r for r in rules if r.direction is direction and r.active(t)]
    if not active:
        return adu, []
    placed = _addressed(adu.pdu, direction, request)
    if placed is None:
        return adu, []
    table, start, count = placed

    fc = adu.pdu.function_code
    values = list(adu.pdu.values)
    rewrites: List[Rewrite] = []
    for rule in active:
        point = rule.point
        if point.table is not table:
            continue
        index = point.address - start
        if not 0 <= index < count:
            continue
        before = _decode_value(fc, values[index])
        after = rule.rewrite(before)
        if after == before:
            continue
        values[index] = _encode_value(fc, after)
        rewrites.append(Rewrite(point.name, fc, table, point.address, before, after))

    if not rewrites:
        return adu, []
    return replace(adu, pdu=replace(adu.pdu, values=tuple(values))), rewrites


def apply_rules(adu: ApplicationDataUnit, rules: Sequence[SpoofRule], direction: Direction, t: float,
                request: Optional[Pdu] = None) -> ApplicationDataUnit:
    return rewrite_frame(adu, rules, direction, t, request)[0]


class RequestTracker:
    """Outstanding requests of one proxied connection, by transaction id.

    Holds at most ``max_pending`` requests; the oldest unanswered one is
    forgotten first.
    """

    def __init__(self, max_pending: int = 256):
        self.max_pending = max_pending
        self._pending: "OrderedDict[int, Pdu]" = OrderedDict()

    def __len__(self) -> int:
        return len(self._pending)

    def remember(self, adu: ApplicationDataUnit) -> None:
        txn = adu.header.transaction_id
        self._pending.pop(txn, None)
        self._pending[txn] = adu.pdu
        while len(self._pending) > self.max_pending:
            self._pending.popitem(last=False)

    def match(self, adu: ApplicationDataUnit) -> Optional[Pdu]:
        return self._pending.pop(adu.header.transaction_id, None)
