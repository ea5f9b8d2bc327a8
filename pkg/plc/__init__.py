"""Soft PLC: control programs, scan functions and the mirrored Modbus image."""

from plc.control import ChemController, ChemRecipe, LineSequencer, PiController
from plc.main import ScanImage, SoftPlc, plc_scan_chem, plc_scan_line
