"""
PlantWatch Tests - Control programs and the soft PLC scan.
"""

import asyncio
import unittest
from unittest.mock import AsyncMock

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modbus.bank import Table
from modbus.errors import TransportError
from plant.chem import REGISTER_MAX, SENSOR_NAMES, VALVE_NAMES
from plant.line import COIL_INDEX, COIL_NAMES, SENSOR_BIT_INDEX
from plant.main import ChemPlant, LinePlant
from plc.control import ChemController, LineSequencer, PiController, Step
from plc.main import SCAN_ADDRESS, STALE_ADDRESS, ScanImage, SoftPlc, plc_scan_chem
from utils import Config, Endpoint


def chem_sensors(state):
    return {name: state.sensor(name) for name in SENSOR_NAMES}


def bits(**on):
    values = [0] * 10
    for name, value in on.items():
        values[SENSOR_BIT_INDEX[name]] = int(value)
    return values


class TestPiController(unittest.TestCase):
    """Test the PI block."""

    def test_direct_acting_sign(self):
        """Test that a measurement below setpoint raises the output."""
        pi = PiController(kp=1.0, ki=0.1, setpoint=0.5, bias=0.4)
        self.assertGreater(pi.update(0.4), 0.4)

    def test_reverse_acting_sign(self):
        """Test that a reverse-acting loop opens when the measurement is high."""
        pi = PiController(kp=1.0, ki=0.1, setpoint=0.5, bias=0.2, reverse=True)
        self.assertGreater(pi.update(0.6), 0.2)

    def test_anti_windup(self):
        """Test that the integral freezes while the output is saturated."""
        pi = PiController(kp=1.0, ki=0.5, setpoint=1.0, bias=0.9)
        for _ in range(20):
            self.assertEqual(pi.update(0.0), 1.0)
        self.assertTrue(pi.saturated)
        self.assertEqual(pi.integral, 0.0)
        # Without windup the loop leaves saturation as soon as the error flips.
        self.assertLess(pi.update(1.2), 1.0)


class TestChemController(unittest.TestCase):
    """Test the chemical plant control program."""

    def test_level_below_setpoint_opens_feed(self):
        """Test that a low level opens feed1 beyond its equilibrium position."""
        controller = ChemController()
        state, valves = controller.operating_point(0.0)
        sensors = chem_sensors(state)
        sensors["tank_level"] = 0.45
        command = controller.compute(sensors, 0.0)
        self.assertGreater(command.v_feed1, valves.v_feed1)

    def test_equilibrium_holds_commands(self):
        """Test that sensors at their setpoints leave every command unchanged."""
        controller = ChemController()
        state, valves = controller.operating_point(0.0)
        for _ in range(3):
            command = controller.compute(chem_sensors(state), 0.0)
            for got, want in zip(command.as_tuple(), valves.as_tuple()):
                self.assertAlmostEqual(got, want, places=12)

    def test_recipe_is_periodic(self):
        """Test that the recipe repeats with the configured cycle."""
        controller = ChemController(cycle_s=1000.0)
        for t in (0.0, 123.0, 640.0):
            self.assertAlmostEqual(controller.recipe.product_flow(t), controller.recipe.product_flow(t + 1000.0))
            self.assertAlmostEqual(controller.recipe.feed_ratio(t), controller.recipe.feed_ratio(t + 1000.0))

    def test_config_overrides_gains(self):
        """Test that loop gains come from the control section."""
        controller = ChemController({'loops': {'level': {'kp': 2.0}}})
        self.assertEqual(controller.level.kp, 2.0)
        self.assertEqual(controller.level.ki, 0.1)


class TestLineSequencer(unittest.TestCase):
    """Test the line sequencer."""

    def test_pickup_asserts_grip(self):
        """Test that a part at the end of the feed belt starts loading on the next scan."""
        sequencer = LineSequencer()
        coils = sequencer.compute(bits(), [0.0, 0.0], 0.0)
        self.assertEqual(coils[COIL_INDEX["feed_a"]], 1)
        coils = sequencer.compute(bits(feed_a_at_end=1), [0.0, 0.0], 1.0)
        self.assertEqual(coils[COIL_INDEX["grip_a"]], 1)
        self.assertEqual(coils[COIL_INDEX["feed_a"]], 0)

    def test_idle_between_takts(self):
        """Test that nothing moves while both cells wait for their takt."""
        sequencer = LineSequencer({'offsets_s': {'a': 100, 'b': 200}})
        coils = sequencer.compute(bits(), [0.0, 0.0], 10.0)
        self.assertEqual(coils, (0,) * 15)

    def test_both_centers_load_independently(self):
        """Test that both cells react to their own pickup bits in the same scan."""
        sequencer = LineSequencer({'offsets_s': {'a': 0, 'b': 0}})
        sequencer.compute(bits(), [0.0, 0.0], 0.0)
        coils = sequencer.compute(bits(feed_a_at_end=1, feed_b_at_end=1), [0.0, 0.0], 1.0)
        self.assertEqual(coils[COIL_INDEX["grip_a"]], 1)
        self.assertEqual(coils[COIL_INDEX["grip_b"]], 1)

        solo = LineSequencer({'offsets_s': {'a': 0, 'b': 0}})
        solo.compute(bits(), [0.0, 0.0], 0.0)
        solo_coils = solo.compute(bits(feed_a_at_end=1), [0.0, 0.0], 1.0)
        for name in COIL_NAMES:
            if name.endswith("_a") or name.startswith("arm_a_"):
                self.assertEqual(coils[COIL_INDEX[name]], solo_coils[COIL_INDEX[name]], name)

    def test_step_chain(self):
        """Test the full step order of one cell."""
        sequencer = LineSequencer({'offsets_s': {'a': 0, 'b': 1000}})
        script = [
            (bits(), 0.0, Step.FEED),
            (bits(feed_a_at_end=1), 0.0, Step.PICK),
            (bits(arm_a_holding=1), 0.0, Step.TO_MACHINE),
            (bits(arm_a_holding=1), 1.0, Step.LOAD),
            (bits(), 1.0, Step.MACHINING),
            (bits(machine_a_busy=1, machine_a_done=1), 1.0, Step.UNLOAD_PICK),
            (bits(arm_a_holding=1), 1.0, Step.TO_CONVEYOR),
            (bits(arm_a_holding=1), 0.0, Step.DROP),
            (bits(exit_a_occupied=1), 0.0, Step.EXIT),
            (bits(), 0.0, Step.WAIT_TAKT),
        ]
        for t, (sensor_bits, position, expected) in enumerate(script):
            sequencer.compute(sensor_bits, [position, 0.0], float(t))
            self.assertIs(sequencer.steps()["a"], expected)


class TestChemScanCommit(unittest.IsolatedAsyncioTestCase):
    """Test that loop state follows what the plant actually received."""

    def setUp(self):
        self.controller = ChemController()
        state, _ = self.controller.operating_point(0.0)
        sensors = chem_sensors(state)
        sensors["tank_level"] = 0.3
        self.raw = tuple(round(sensors[name] * REGISTER_MAX) for name in SENSOR_NAMES)
        self.link = AsyncMock()

    async def test_failed_valve_write_rolls_back_loops(self):
        """Test that a rejected valve write leaves every PI loop as it was."""
        self.link.read.return_value = self.raw
        self.link.write.side_effect = TransportError("feed1 unreachable")
        before = self.controller.snapshot()
        image = await plc_scan_chem(ScanImage(), self.controller, self.link, 0.0)
        self.assertTrue(image.stale)
        self.assertEqual(image.stale_scans, 1)
        self.assertEqual(self.controller.snapshot(), before)

    async def test_delivered_write_commits_loops(self):
        """Test that a delivered write keeps the new loop state even if the readback fails."""
        self.link.read.side_effect = [self.raw, TransportError("readback lost")]
        before = self.controller.snapshot()
        image = await plc_scan_chem(ScanImage(), self.controller, self.link, 0.0)
        self.assertTrue(image.stale)
        self.link.write.assert_awaited_once()
        self.assertNotEqual(self.controller.snapshot(), before)


class TestSoftPlc(unittest.IsolatedAsyncioTestCase):
    """Test scans against live plant servers."""

    async def asyncSetUp(self):
        self.config = Config("config/nonexistent.yaml")

    async def test_chem_scan_mirrors_image(self):
        """Test that a benign scan serves readbacks equal to commands."""
        program = ChemController()
        state, valves = program.operating_point(0.0)
        plant = ChemPlant(self.config, state=state, valves=valves, seed=3)
        await plant.start()
        plc = SoftPlc("chem", self.config, plant.endpoints(), program)
        await plc.start()
        try:
            for t in range(3):
                image = await plc.scan(float(t))
                plant.tick(1.0)
                self.assertFalse(image.stale)
                self.assertEqual(image.readbacks, image.commands)
            self.assertEqual(image.scans, 3)
            served = plc.bank.read(Table.INPUT_REGISTERS, 0, 9)
            self.assertEqual(tuple(served), image.sensors)
            self.assertEqual(tuple(plc.bank.read(Table.HOLDING_REGISTERS, 0, 4)), image.commands)
            self.assertEqual(tuple(plc.bank.read(Table.INPUT_REGISTERS, 100, 4)), image.readbacks)
            self.assertEqual(plc.bank.read(Table.INPUT_REGISTERS, SCAN_ADDRESS)[0], 3)
            self.assertEqual(plant.valves().to_registers(), image.commands)
        finally:
            await plc.stop()
            await plant.stop()

    async def test_unreachable_plant_freezes_image(self):
        """Test that failed scans count as stale and keep the last image."""
        server = await asyncio.start_server(lambda r, w: None, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        server.close()
        await server.wait_closed()
        endpoints = {name: Endpoint("127.0.0.1", port) for name in ("tank", "feed1", "feed2", "product", "purge")}

        plc = SoftPlc("chem", self.config, endpoints, ChemController())
        await plc.start()
        try:
            before = plc.image
            for t in range(3):
                image = await plc.scan(float(t))
            self.assertEqual(image.stale_scans, 3)
            self.assertTrue(image.stale)
            self.assertEqual(image.sensors, before.sensors)
            self.assertEqual(image.commands, before.commands)
            self.assertEqual(plc.bank.read(Table.INPUT_REGISTERS, STALE_ADDRESS)[0], 3)
        finally:
            await plc.stop()

    async def test_line_scan(self):
        """Test one line scan writes all coils and reads them back."""
        plant = LinePlant(self.config)
        await plant.start()
        plc = SoftPlc("line", self.config, plant.endpoints(), LineSequencer())
        await plc.start()
        try:
            image = await plc.scan(0.0)
            self.assertEqual(len(image.commands), 15)
            self.assertEqual(image.readbacks, image.commands)
            self.assertEqual(image.commands[COIL_INDEX["feed_a"]], 1)
            self.assertEqual(image.commands[COIL_INDEX["feed_b"]], 0)
            self.assertEqual(image.commands[COIL_INDEX["running_light"]], 1)
            self.assertEqual(tuple(plant.coils()), image.commands)
            self.assertEqual(tuple(plc.bank.read(Table.DISCRETE_INPUTS, 100, 15)), image.readbacks)
        finally:
            await plc.stop()
            await plant.stop()


if __name__ == '__main__':
    unittest.main()
