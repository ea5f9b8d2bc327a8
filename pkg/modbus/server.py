import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from modbus.bank import RegisterBank, execute_request
from modbus.codec import (
    EXCEPTION_FLAG, ILLEGAL_FUNCTION, MBAP, MBAP_SIZE, Pdu, build_adu, decode_adu, encode_adu, frame_size,
)
from modbus.errors import DecodeError, ProtocolError, UnsupportedFunction
from utils import ConnectionStats


@dataclass
class ClientConnection:
    client_id: str
    address: Tuple[str, int]
    connected_time: float
    last_activity: float
    stats: ConnectionStats = field(default_factory=ConnectionStats)
    reader: Optional[asyncio.StreamReader] = None
    writer: Optional[asyncio.StreamWriter] = None


async def read_frame(reader: asyncio.StreamReader) -> bytes:
    """Read exactly one MBAP frame; raises IncompleteReadError on EOF."""
    header = await reader.readexactly(MBAP_SIZE)
    total = frame_size(header)
    return header + await reader.readexactly(total - MBAP_SIZE)


class ModbusServer:
    """One Modbus TCP listener serving one RegisterBank.

    Each connection is handled independently and may carry any number of
    transactions. The unit id is echoed but not used for routing.
    """

    def __init__(self, bank: RegisterBank, host: str = "127.0.0.1", port: int = 0,
                 name: str = "modbus"):
        self.bank = bank
        self.host = host
        self.port = port
        self.name = name
        self.logger = logging.getLogger(__name__)

        self.clients: Dict[str, ClientConnection] = {}
        self.server: Optional[asyncio.Server] = None
        self.running = False

        self.total_connections = 0
        self.total_requests = 0
        self.total_exceptions = 0
        self.start_time = 0.0

    async def start(self) -> None:
        self.server = await asyncio.start_server(self._handle_client_connection, self.host, self.port)
        self.port = self.server.sockets[0].getsockname()[1]
        self.running = True
        self.start_time = time.time()
        self.logger.info(f"Modbus server '{self.name}' listening on {self.host}:{self.port}")

    async def stop(self) -> None:
        if not self.running:
            return
        self.running = False

        for client in list(self.clients.values()):
            try:
                client.writer.close()
            except Exception:
                pass
        self.clients.clear()

        if self.server:
            self.server.close()
            await self.server.wait_closed()
            self.server = None

        self.logger.info(
            f"Modbus server '{self.name}' stopped - connections: {self.total_connections}, "
            f"requests: {self.total_requests}, exceptions: {self.total_exceptions}"
        )

    async def _handle_client_connection(self, reader: asyncio.StreamReader,
                                        writer: asyncio.StreamWriter) -> None:
        client_address = writer.get_extra_info('peername')
        client_id = f"{client_address[0]}:{client_address[1]}"
        client = ClientConnection(
            client_id=client_id,
            address=client_address,
            connected_time=time.time(),
            last_activity=time.time(),
            reader=reader,
            writer=writer,
        )
        self.clients[client_id] = client
        self.total_connections += 1
        self.logger.debug(f"'{self.name}' accepted {client_id}")

        try:
            while self.running:
                try:
                    frame = await read_frame(reader)
                except asyncio.IncompleteReadError:
                    break

                client.last_activity = time.time()
                client.stats.bytes_received += len(frame)
                client.stats.frames_received += 1

                response = self.handle_frame(frame)
                if response is None:
                    continue
                writer.write(response)
                await writer.drain()
                client.stats.bytes_sent += len(response)
                client.stats.frames_sent += 1

        except ProtocolError as e:
            self.logger.warning(f"'{self.name}' dropping {client_id}: {e}")
        except (ConnectionError, OSError) as e:
            if self.running:
                self.logger.debug(f"'{self.name}' connection {client_id} lost: {e}")
        finally:
            self.clients.pop(client_id, None)
            try:
                writer.close()
                await writer.wait_closed()
            except Exception:
                pass

    def handle_frame(self, frame: bytes) -> Optional[bytes]:
        """Decode, execute and encode one request frame.

        An unimplemented function code is answered with ILLEGAL FUNCTION;
        frames that cannot be parsed at all get no answer.
        """
        try:
            request = decode_adu(frame)
        except UnsupportedFunction as e:
            if not 1 <= e.function_code < EXCEPTION_FLAG:
                self.logger.warning(f"'{self.name}' ignoring frame with function code 0x{e.function_code:02X}")
                return None
            self.logger.debug(f"'{self.name}' rejecting function 0x{e.function_code:02X}")
            self.total_requests += 1
            self.total_exceptions += 1
            transaction_id, _, _, unit_id = MBAP.unpack_from(frame)
            response = build_adu(transaction_id, unit_id, Pdu.exception(e.function_code, ILLEGAL_FUNCTION))
            return encode_adu(response.header, response.pdu)
        except DecodeError as e:
            self.logger.warning(f"'{self.name}' ignoring undecodable frame {e.raw.hex()}: {e}")
            return None

        response_pdu = execute_request(self.bank, request.pdu)
        self.total_requests += 1
        if response_pdu.is_exception:
            self.total_exceptions += 1

        response = build_adu(request.header.transaction_id, request.header.unit_id, response_pdu)
        return encode_adu(response.header, response.pdu)

    def get_server_stats(self) -> Dict:
        uptime = time.time() - self.start_time if self.start_time else 0
        return {
            'name': self.name,
            'uptime': uptime,
            'active_clients': len(self.clients),
            'total_connections': self.total_connections,
            'total_requests': self.total_requests,
            'total_exceptions': self.total_exceptions,
            'host': self.host,
            'port': self.port
        }
