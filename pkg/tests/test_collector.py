"""
PlantWatch Tests - Sampling the PLC and writing captures.
"""

import hashlib
import tempfile
import unittest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from collector.main import (
    CaptureRecord, CaptureWriter, Collector, Manifest, Snapshot, capture_header, feature_matrix, featurize,
    load_capture, poll_sample,
)
from modbus.bank import RegisterBank, Table
from modbus.client import ModbusClient
from modbus.server import ModbusServer
from plc.main import CHEM_LAYOUT, LINE_LAYOUT, SCAN_ADDRESS, STALE_ADDRESS
from utils import Endpoint


def chem_snapshot(t, sensors, readbacks=(0,) * 4, commands=(0,) * 4):
    return Snapshot(t=t, platform="chem", sensors=tuple(sensors), readbacks=tuple(readbacks),
                    commands=tuple(commands))


def line_snapshot(t, bits, positions=(0, 0), coils=(0,) * 15):
    return Snapshot(t=t, platform="line", sensors=tuple(bits) + tuple(positions), readbacks=tuple(coils),
                    commands=tuple(coils))


class TestFeaturize(unittest.TestCase):
    """Test feature vectors."""

    def test_dimensions(self):
        """Test the fixed feature dimension per platform."""
        self.assertEqual(len(featurize(chem_snapshot(0, [0] * 9))), 26)
        self.assertEqual(len(featurize(line_snapshot(0, [0] * 10))), 54)
        self.assertEqual(len(capture_header(CHEM_LAYOUT)), 28)
        self.assertEqual(capture_header(LINE_LAYOUT)[:2], ["t", "s_0"])
        self.assertEqual(capture_header(LINE_LAYOUT)[-2:], ["c_14", "label"])

    def test_register_scaling(self):
        """Test that registers scale by the full register range."""
        vector = featurize(chem_snapshot(0, [32768] + [0] * 8, commands=[65535, 0, 0, 0]))
        self.assertAlmostEqual(vector.sensors[0], 32768 / 65535, places=15)
        self.assertAlmostEqual(vector.sensors[0], 0.50001, places=5)
        self.assertEqual(vector.commands[0], 1.0)

    def test_first_and_identical_deltas(self):
        """Test zero deltas on the first row and on unchanged readings."""
        first = chem_snapshot(0, range(100, 109))
        self.assertEqual(featurize(first).deltas, (0.0,) * 9)
        self.assertEqual(featurize(chem_snapshot(1, range(100, 109)), first).deltas, (0.0,) * 9)

    def test_bit_delta(self):
        """Test that a binary sensor going high gives a delta of +1."""
        before = line_snapshot(0, [0] * 10)
        after = line_snapshot(1, [1] + [0] * 9, positions=(65535, 0))
        vector = featurize(after, before)
        self.assertEqual(vector.sensors[0], 1.0)
        self.assertEqual(vector.deltas[0], 1.0)
        self.assertEqual(vector.deltas[10], 1.0)
        self.assertTrue(all(d in (-1.0, 0.0, 1.0) for d in vector.deltas[:10]))

    def test_address_map_mismatch(self):
        """Test that snapshots from different maps cannot be differenced."""
        with self.assertRaises(ValueError):
            featurize(chem_snapshot(1, [0] * 9), line_snapshot(0, [0] * 10))
        with self.assertRaises(ValueError):
            featurize(chem_snapshot(0, [0] * 8))


class TestCaptureFiles(unittest.TestCase):
    """Test capture CSVs and manifests."""

    def test_write_and_load(self):
        """Test the header, row count and delta telescoping of a written capture."""
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 65536, size=(50, 9))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "benign_000.csv"
            previous = None
            with CaptureWriter(path, CHEM_LAYOUT, label=0) as writer:
                for t, row in enumerate(raw):
                    snapshot = chem_snapshot(float(t), row.tolist())
                    writer.write(featurize(snapshot, previous))
                    previous = snapshot
            self.assertEqual(writer.rows, 50)
            text = path.read_bytes()
            df = load_capture(path)

        self.assertNotIn(b"\r\n", text)
        self.assertEqual(list(df.columns), capture_header(CHEM_LAYOUT))
        self.assertEqual(len(df), 50)
        self.assertTrue((df["label"] == 0).all())
        X = feature_matrix(df)
        self.assertEqual(X.shape, (50, 26))
        sensors, deltas = X[:, :9], X[:, 9:18]
        np.testing.assert_allclose(deltas.sum(axis=0), sensors[-1] - sensors[0], atol=1e-12)
        np.testing.assert_allclose(sensors, raw / 65535, atol=1e-15)

    def test_headers_stable(self):
        """Test that every capture of a platform shares one header."""
        with tempfile.TemporaryDirectory() as tmp:
            digests = set()
            for i in range(5):
                path = Path(tmp) / f"c{i}.csv"
                CaptureWriter(path, LINE_LAYOUT, label=i % 2).close()
                digests.add(hashlib.sha256(path.read_bytes().splitlines()[0]).hexdigest())
        self.assertEqual(len(digests), 1)

    def test_manifest(self):
        """Test saving and loading a manifest."""
        manifest = Manifest(metadata={'platform': 'line'})
        manifest.add(CaptureRecord(name="benign_000", path="benign_000.csv", platform="line", cycle_s=400, rows=400))
        manifest.add(CaptureRecord(name="x", path="x.csv", platform="line", scenario="x", category="Complex",
                                   label=1, onset=5, cycle_s=400, rows=380, valid=False))
        with tempfile.TemporaryDirectory() as tmp:
            manifest.save(Path(tmp) / "manifest.json")
            loaded = Manifest.load(Path(tmp) / "manifest.json")
        self.assertEqual(loaded.captures, manifest.captures)
        self.assertEqual(loaded.metadata['platform'], 'line')
        self.assertEqual([c.name for c in loaded.valid()], ["benign_000"])
        self.assertTrue(loaded.captures[0].row_count_ok)
        self.assertFalse(loaded.captures[1].row_count_ok)


class TestPolling(unittest.IsolatedAsyncioTestCase):
    """Test polling a PLC-shaped bank."""

    async def asyncSetUp(self):
        self.bank = RegisterBank(CHEM_LAYOUT.bank_layout())
        self.bank.write(Table.INPUT_REGISTERS, 0, list(range(1000, 1009)))
        self.bank.write(Table.INPUT_REGISTERS, 100, [11, 12, 13, 14])
        self.bank.write(Table.HOLDING_REGISTERS, 0, [21, 22, 23, 24])
        self.bank.write(Table.INPUT_REGISTERS, STALE_ADDRESS, [2, 77])
        self.server = ModbusServer(self.bank, port=0, name="plc")
        await self.server.start()
        self.endpoint = Endpoint("127.0.0.1", self.server.port)

    async def asyncTearDown(self):
        await self.server.stop()

    async def test_snapshot_matches_bank(self):
        """Test that a snapshot equals the served values."""
        async with ModbusClient(self.endpoint) as client:
            snapshot = await poll_sample(client, CHEM_LAYOUT, 3.0)
        self.assertEqual(snapshot.sensors, tuple(range(1000, 1009)))
        self.assertEqual(snapshot.readbacks, (11, 12, 13, 14))
        self.assertEqual(snapshot.commands, (21, 22, 23, 24))
        self.assertEqual((snapshot.stale_scans, snapshot.scan), (2, 77))
        self.assertEqual(snapshot.t, 3.0)

    async def test_collector_rows(self):
        """Test that consecutive samples are one second apart and land in the capture."""
        collector = Collector("chem", self.endpoint)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "capture.csv"
            collector.begin(path, label=1)
            try:
                first = await collector.sample(0.0)
                self.bank.write(Table.INPUT_REGISTERS, 0, [2000])
                self.bank.write(Table.INPUT_REGISTERS, SCAN_ADDRESS, [78])
                second = await collector.sample(1.0)
            finally:
                await collector.close()
            df = load_capture(path)
        self.assertEqual(second.t - first.t, 1.0)
        self.assertAlmostEqual(second.deltas[0], 1000 / 65535)
        self.assertEqual(len(df), 2)
        self.assertEqual(df["t"].tolist(), [0.0, 1.0])
        self.assertTrue((df["label"] == 1).all())

    async def test_plc_down_drops_sample(self):
        """Test that an unreachable PLC drops the sample and records the gap."""
        await self.server.stop()
        collector = Collector("chem", self.endpoint, timeout=0.5, connect_timeout=0.5)
        try:
            self.assertIsNone(await collector.sample(4.0))
        finally:
            await collector.close()
        self.assertEqual(collector.gaps, [4.0])


if __name__ == '__main__':
    unittest.main()
