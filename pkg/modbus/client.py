"""
Modbus TCP client: one persistent connection, pipelined transactions matched by id.
"""

import asyncio
import itertools
import logging
import time
from typing import Dict, List, Optional, Sequence

from modbus.codec import (
    READ_COILS, READ_DISCRETE_INPUTS, READ_HOLDING_REGISTERS, READ_INPUT_REGISTERS,
    Pdu, build_adu, decode_adu, encode_adu,
)
from modbus.errors import DecodeError, ModbusExceptionResponse, ProtocolError, TransportError
from modbus.server import read_frame
from utils import ConnectionStats, Endpoint


class ModbusClient:
    """Client for one Modbus TCP endpoint.

    Requests may be pipelined; a background reader hands each response to
    the transaction waiting for its id.
    """

    def __init__(self, endpoint: Endpoint, unit_id: int = 1, timeout: float = 2.0,
                 connect_timeout: float = 2.0):
        self.endpoint = endpoint
        self.unit_id = unit_id
        self.timeout = timeout
        self.connect_timeout = connect_timeout
        self.logger = logging.getLogger(__name__)

        self.stats = ConnectionStats()
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None
        self._reader_task: Optional[asyncio.Task] = None
        self._pending: Dict[int, asyncio.Future] = {}
        self._txn = itertools.cycle(range(1, 0x10000))
        self._write_lock = asyncio.Lock()

    @property
    def connected(self) -> bool:
        return self._writer is not None and not self._writer.is_closing()

    async def connect(self) -> None:
        if self.connected:
            return
        try:
            self._reader, self._writer = await asyncio.wait_for(
                asyncio.open_connection(self.endpoint.host, self.endpoint.port),
                timeout=self.connect_timeout,
            )
        except (asyncio.TimeoutError, OSError) as e:
            raise TransportError(f"cannot connect to {self.endpoint}: {e}") from e
        self.stats.connection_time = time.time()
        self._reader_task = asyncio.create_task(self._read_responses())
        self.logger.debug(f"Connected to {self.endpoint}")

    async def close(self) -> None:
        if self._reader_task:
            self._reader_task.cancel()
            try:
                await self._reader_task
            except (asyncio.CancelledError, Exception):
                pass
            self._reader_task = None
        if self._writer:
            try:
                self._writer.close()
                await self._writer.wait_closed()
            except Exception:
                pass
            self._writer = None
        self._fail_pending(TransportError(f"connection to {self.endpoint} closed"))

    async def __aenter__(self) -> "ModbusClient":
        await self.connect()
        return self

    async def __aexit__(self, *exc) -> None:
        await self.close()

    def next_transaction_id(self) -> int:
        return next(self._txn)

    async def send(self, pdu: Pdu, transaction_id: Optional[int] = None) -> asyncio.Future:
        """Write one request and return the future its response will resolve."""
        if not self.connected:
            await self.connect()
        txn = self.next_transaction_id() if transaction_id is None else transaction_id
        if txn in self._pending:
            raise ProtocolError(f"transaction {txn} already in flight")

        adu = build_adu(txn, self.unit_id, pdu)
        frame = encode_adu(adu.header, adu.pdu)
        future = asyncio.get_running_loop().create_future()
        self._pending[txn] = future
        try:
            async with self._write_lock:
                self._writer.write(frame)
                await self._writer.drain()
        except (ConnectionError, OSError) as e:
            self._pending.pop(txn, None)
            await self.close()
            raise TransportError(f"send to {self.endpoint} failed: {e}") from e
        self.stats.bytes_sent += len(frame)
        self.stats.frames_sent += 1
        return future

    async def wait(self, future: asyncio.Future) -> Pdu:
        try:
            return await asyncio.wait_for(asyncio.shield(future), timeout=self.timeout)
        except asyncio.TimeoutError:
            self._forget(future)
            raise TransportError(f"no response from {self.endpoint} within {self.timeout}s") from None

    async def transact(self, pdu: Pdu, transaction_id: Optional[int] = None) -> Pdu:
        """Send one request and wait for the response carrying the same id."""
        return await self.wait(await self.send(pdu, transaction_id))

    async def _read_responses(self) -> None:
        try:
            while True:
                try:
                    frame = await read_frame(self._reader)
                except asyncio.IncompleteReadError:
                    raise TransportError(f"{self.endpoint} closed the connection") from None
                self.stats.bytes_received += len(frame)
                self.stats.frames_received += 1

                try:
                    adu = decode_adu(frame, response=True)
                except DecodeError as e:
                    raise ProtocolError(f"undecodable response from {self.endpoint}: {e}") from e

                txn = adu.header.transaction_id
                future = self._pending.pop(txn, None)
                if future is None:
                    raise ProtocolError(f"response for unknown transaction {txn} from {self.endpoint}")
                if not future.done():
                    future.set_result(adu.pdu)
        except asyncio.CancelledError:
            raise
        except (ProtocolError, TransportError) as e:
            self.logger.warning(str(e))
            self._fail_pending(e)
        except (ConnectionError, OSError) as e:
            self._fail_pending(TransportError(f"connection to {self.endpoint} lost: {e}"))
        finally:
            if self._writer:
                self._writer.close()

    def _fail_pending(self, error: Exception) -> None:
        pending, self._pending = self._pending, {}
        for future in pending.values():
            if not future.done():
                future.set_exception(error)

    def _forget(self, future: asyncio.Future) -> None:
        for txn, f in list(self._pending.items()):
            if f is future:
                del self._pending[txn]

    def _checked(self, request: Pdu, response: Pdu) -> Pdu:
        if response.base_function != request.function_code:
            raise ProtocolError(
                f"response function 0x{response.function_code:02X} "
                f"does not answer request 0x{request.function_code:02X}"
            )
        if response.is_exception:
            self.stats.exceptions += 1
            raise ModbusExceptionResponse(request.function_code, response.exception_code)
        return response

    async def _read(self, function_code: int, address: int, count: int) -> List[int]:
        request = Pdu.read(function_code, address, count)
        response = self._checked(request, await self.transact(request))
        values = list(response.values[:count])
        if len(values) != count:
            raise ProtocolError(f"asked for {count} points, got {len(values)}")
        return values

    async def read_coils(self, address: int, count: int) -> List[int]:
        return await self._read(READ_COILS, address, count)

    async def read_discrete_inputs(self, address: int, count: int) -> List[int]:
        return await self._read(READ_DISCRETE_INPUTS, address, count)

    async def read_holding_registers(self, address: int, count: int) -> List[int]:
        return await self._read(READ_HOLDING_REGISTERS, address, count)

    async def read_input_registers(self, address: int, count: int) -> List[int]:
        return await self._read(READ_INPUT_REGISTERS, address, count)

    async def write_coil(self, address: int, on: bool) -> None:
        request = Pdu.write_coil(address, on)
        self._checked(request, await self.transact(request))

    async def write_register(self, address: int, value: int) -> None:
        request = Pdu.write_register(address, value)
        self._checked(request, await self.transact(request))

    async def write_coils(self, address: int, bits: Sequence[int]) -> None:
        request = Pdu.write_coils(address, bits)
        self._checked(request, await self.transact(request))

    async def write_registers(self, address: int, values: Sequence[int]) -> None:
        request = Pdu.write_registers(address, values)
        self._checked(request, await self.transact(request))


async def client_transact(endpoint: Endpoint, request: Pdu, timeout: float = 2.0) -> Pdu:
    """One-shot transaction on a fresh connection; returns the raw response PDU."""
    client = ModbusClient(endpoint, timeout=timeout, connect_timeout=timeout)
    async with client:
        return await client.transact(request)
