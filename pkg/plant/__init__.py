"""Surrogate plants: a continuous chemical process and a discrete production line."""

from plant.chem import ChemParams, ChemState, ValveCommand, encode_chem_sensors, equilibrium, step_chem
from plant.clock import SimClock
from plant.line import LineIo, LineParams, LineState, Phase, encode_line_sensors, step_line
