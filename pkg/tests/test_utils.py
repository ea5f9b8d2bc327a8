"""
PlantWatch Tests - Configuration, network helpers and formatting.
"""

import asyncio
import socket
import tempfile
import unittest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from utils import Config, ConnectionStats, Endpoint, NetworkUtils, format_duration, format_rate

ROOT = Path(__file__).parent.parent


class TestConfig(unittest.TestCase):
    """Test configuration management."""

    def test_config_loading(self):
        """Test configuration file loading."""
        config = Config(str(ROOT / "config" / "config.yaml"))
        self.assertEqual(config.get('chem.window.size'), 15)
        self.assertEqual(config.get('line.window.size'), 5)
        self.assertEqual(config.get('chem.points.tank_level.address'), 1)

    def test_missing_file_uses_defaults(self):
        """Test fallback to built-in defaults."""
        config = Config("config/nonexistent.yaml")
        self.assertEqual(config.get('clock.dt'), 1.0)
        self.assertEqual(config.get('seeds.noise'), 7)
        self.assertEqual(config.get('chem.window.size', 15), 15)

    def test_unparsable_file_uses_defaults(self):
        """Test that broken YAML does not stop startup."""
        with tempfile.NamedTemporaryFile('w', suffix=".yaml", delete=False) as f:
            f.write("clock: [unclosed\n")
        config = Config(f.name)
        self.assertEqual(config.get('network.host'), '127.0.0.1')
        Path(f.name).unlink()

    def test_config_get_nested(self):
        """Test nested configuration access."""
        config = Config("config/nonexistent.yaml")
        config.config = {'chem': {'servers': {'tank': 5020}}}
        self.assertEqual(config.get('chem.servers.tank'), 5020)
        self.assertIsNone(config.get('chem.servers.feed1'))
        self.assertIsNone(config.get('chem.servers.tank.port'))

    def test_override_and_copy(self):
        """Test dotted overrides and independent copies."""
        config = Config("config/nonexistent.yaml")
        config.override('line.plc.port', 5502)
        self.assertEqual(config.get('line.plc.port'), 5502)
        clone = config.copy()
        clone.override('line.plc.port', 0)
        clone.override('clock.dt', 0.5)
        self.assertEqual(config.get('line.plc.port'), 5502)
        self.assertEqual(config.get('clock.dt'), 1.0)


class TestNetworkUtils(unittest.IsolatedAsyncioTestCase):
    """Test network utility functions."""

    async def test_wait_for_port(self):
        """Test waiting on a listening and a closed port."""
        server = await asyncio.start_server(lambda r, w: w.close(), "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        _, ok = await NetworkUtils.wait_for_port("127.0.0.1", port, timeout=2.0)
        self.assertTrue(ok)
        server.close()
        await server.wait_closed()

        elapsed, ok = await NetworkUtils.wait_for_port("127.0.0.1", port, timeout=0.2)
        self.assertFalse(ok)
        self.assertEqual(elapsed, 0.0)

    def test_is_port_in_use(self):
        """Test port availability checking."""
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
            s.bind(("127.0.0.1", 0))
            s.listen()
            self.assertTrue(NetworkUtils.is_port_in_use(s.getsockname()[1]))


class TestHelpers(unittest.TestCase):
    """Test small shared types and formatters."""

    def test_endpoint(self):
        self.assertEqual(str(Endpoint("127.0.0.1", 5020)), "127.0.0.1:5020")

    def test_connection_stats_creation(self):
        stats = ConnectionStats()
        self.assertEqual((stats.frames_sent, stats.exceptions), (0, 0))

    def test_format_duration(self):
        self.assertEqual(format_duration(17.7), "17.7s")
        self.assertEqual(format_duration(400), "6.7min")
        self.assertEqual(format_duration(None), "n/a")

    def test_format_rate(self):
        self.assertEqual(format_rate(0.889), "88.9%")
        self.assertEqual(format_rate(0.0), "0.0%")
        self.assertEqual(format_rate(None), "n/a")


if __name__ == '__main__':
    unittest.main()
