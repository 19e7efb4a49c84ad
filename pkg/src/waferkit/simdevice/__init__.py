"""Deterministic behavioral model of a wafer system, reachable in-process or over the transport."""
from .device import (DEFAULT_DT, DeviceError, NothingRecorded, ProtocolError, SimulatedWafer, playback_address,
                     split_playback_address)
from .fabric import driver_line, driver_lines, line_select_for
from .neuron import AdExParameters, AdExPopulation
from .server import serve

__all__ = ["DEFAULT_DT", "DeviceError", "NothingRecorded", "ProtocolError", "SimulatedWafer", "playback_address",
           "split_playback_address", "driver_line", "driver_lines", "line_select_for", "AdExParameters",
           "AdExPopulation", "serve"]
