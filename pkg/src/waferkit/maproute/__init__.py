"""Compile network descriptions to placement, routes and synapses on the wafer."""
from __future__ import annotations

from ..availability import AvailabilityDb
from .allocate import allocate_synapses, connection_groups, route_all, route_and_allocate
from .network import (BioNeuron, Connection, NetworkDescription, NetworkError, Population, Projection, SpikeSource,
                      load, minimal_example)
from .placement import (ADDRESSES_PER_LINE, DEFAULT_INPUT_CAPACITY, DEFAULT_NEURON_SIZE, INPUT_LINE,
                        InputCapacityExceeded, MappingError, NoTargets, PlacementOverflow, assign_outputs,
                        insert_inputs, place)
from .result import (DriverAssignment, Endpoint, LogicalNeuron, Loss, MappingResult, NotMapped, Route,
                     SynapseAssignment, find)
from .routing import DEFAULT_MAX_SWITCHES, RoutingGraph, Unroutable, route
from .visualize import IoError, export_visualization, render_svg


def compile_network(net: NetworkDescription, availability: AvailabilityDb | None = None,
                    neuron_size: int = DEFAULT_NEURON_SIZE, max_switches: int = DEFAULT_MAX_SWITCHES,
                    wafer: int | None = None, input_capacity: float = DEFAULT_INPUT_CAPACITY) -> MappingResult:
    """place -> insert_inputs -> output lines -> route and allocate; returns a finalized result."""
    result = place(net, availability=availability, neuron_size=neuron_size, wafer=wafer)
    insert_inputs(net, result, availability, input_capacity)
    assign_outputs(net, result, availability)
    graph = RoutingGraph(availability, wafer=result.wafer)
    route_and_allocate(net, result, graph, max_switches)
    return result.finalize()


__all__ = [
    "AvailabilityDb", "BioNeuron", "Connection", "NetworkDescription", "NetworkError", "Population", "Projection",
    "SpikeSource", "load", "minimal_example", "ADDRESSES_PER_LINE", "DEFAULT_INPUT_CAPACITY",
    "DEFAULT_NEURON_SIZE", "INPUT_LINE", "InputCapacityExceeded", "MappingError", "NoTargets", "PlacementOverflow",
    "assign_outputs", "insert_inputs", "place", "DriverAssignment", "Endpoint", "LogicalNeuron", "Loss",
    "MappingResult", "NotMapped", "Route", "SynapseAssignment", "find", "DEFAULT_MAX_SWITCHES", "RoutingGraph",
    "Unroutable", "route", "IoError", "export_visualization", "render_svg", "allocate_synapses",
    "connection_groups", "route_all", "route_and_allocate", "compile_network",
]
