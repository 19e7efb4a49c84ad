"""Synapse driver, row and synapse allocation along established routes.

Connections are grouped by (sending line, target chip).  Each group owns
the drivers it takes on its route's terminal vertical line.  A driver row
accepts one block of 16 event addresses (its ``input_select``), the
synapse decoder picks the low four address bits, and the column is the
primary circuit of the target logical neuron.  When the column of every
matching row is taken a fresh row is opened.  Connections that find no
driver, row or usable synapse are reported as losses.
"""
from __future__ import annotations

from collections import defaultdict

from .. import calib
from .. import coord as C
from ..simdevice.fabric import line_select_for
from .network import BioNeuron, Connection, NetworkDescription
from .placement import chip_name
from .result import DriverAssignment, Loss, MappingResult, Route, SynapseAssignment
from .routing import DEFAULT_MAX_SWITCHES, RoutingGraph, Unroutable, route

_NH = C.N_HLINES


def connection_groups(net: NetworkDescription, result: MappingResult) -> dict:
    """(sender, target chip enum) -> [(connection, address, logical neuron)], ordered by key.

    Connections whose endpoints are not mapped are grouped under the key ``None``.
    """
    groups = defaultdict(list)
    for proj in net.projections:
        for c in proj.connections:
            pre = BioNeuron(proj.source, c.pre)
            ep = result.injections.get(pre) or result.outputs.get(pre)
            ln = result.placement.get(BioNeuron(proj.target, c.post))
            if ep is None or ln is None:
                groups[None].append((c, None, None))
                continue
            groups[(ep.sender, ln.chip.enum)].append((c, ep.address, ln))
    unmapped = groups.pop(None, [])
    out = {k: groups[k] for k in sorted(groups)}
    if unmapped:
        out[None] = unmapped
    return out


def _sender_line(sender) -> C.BusLineOnWafer:
    return C.BusLineOnWafer(C.BusLineOnHICANN.horizontal(sender[1]), C.HICANNOnWafer.from_enum(sender[0]))


def route_all(net: NetworkDescription, result: MappingResult, graph: RoutingGraph,
              max_switches: int = DEFAULT_MAX_SWITCHES, strict: bool = True) -> MappingResult:
    """Route every (sender, target chip) pair; with ``strict`` the first failure raises Unroutable."""
    groups = connection_groups(net, result)
    for sender in result.senders():
        graph.reserve(sender, sender)
    for key, items in groups.items():
        if key is None:
            continue
        sender, chip = key
        hemis = {ln.hemisphere for _, _, ln in items}
        try:
            r = route(graph, _sender_line(sender), C.HICANNOnWafer.from_enum(chip), max_switches, hemis, sender)
        except Unroutable:
            if strict:
                raise
            continue
        result.routes.append(r)
    result.max_switches = max_switches
    return result


class _Group:
    """Drivers and rows held by one (sender, target chip) pair."""

    def __init__(self, graph: RoutingGraph, chip: int, vertical: int, route_index: int):
        self.graph, self.chip, self.vertical, self.route_index = graph, chip, vertical, route_index
        self.drivers: list[list] = []  # [driver enum, [block | None, block | None]]
        self.rows: dict[tuple[int, int], list] = defaultdict(list)  # (hemi, block) -> [(row enum, taken cols)]
        self.hicann = C.HICANNOnWafer.from_enum(chip)
        self.availability = graph.availability

    def _usable(self, coord) -> bool:
        return self.availability is None or self.availability.is_usable(coord)

    def _open_row(self, hemi: int, block: int):
        """Assign a free usable row of a held or new driver of ``hemi`` to ``block``."""
        while True:
            for entry in self.drivers:
                drv = C.SynapseDriverOnHICANN.from_enum(entry[0])
                if drv.hemisphere != hemi:
                    continue
                for k, row in enumerate(drv.rows()):
                    if entry[1][k] is None and self._usable(C.SynapseRowOnWafer(row, self.hicann)):
                        entry[1][k] = block
                        slot = (row.enum, {})
                        self.rows[(hemi, block)].append(slot)
                        return slot
            d = self.graph.take_driver(self.chip, self.vertical, hemi)
            if d is None:
                return None
            self.drivers.append([d, [None, None]])

    def place(self, address: int, ln) -> tuple[C.SynapseOnWafer, int] | str:
        """Synapse for an event address onto a logical neuron, or the loss reason."""
        hemi, col = ln.hemisphere, ln.x
        block, decoder = address >> 4, address & 15
        for row_enum, cols in self.rows[(hemi, block)]:
            if col in cols:
                continue
            syn = C.SynapseOnWafer(C.SynapseOnHICANN.from_enum(row_enum * C.N_COLUMNS + col), self.hicann)
            if self._usable(syn):
                cols[col] = decoder
                return syn, row_enum
        while True:
            slot = self._open_row(hemi, block)
            if slot is None:
                return "no_driver_row"
            row_enum, cols = slot
            syn = C.SynapseOnWafer(C.SynapseOnHICANN.from_enum(row_enum * C.N_COLUMNS + col), self.hicann)
            if self._usable(syn):
                cols[col] = decoder
                return syn, row_enum

    def assignments(self) -> list[DriverAssignment]:
        out = []
        for d, blocks in self.drivers:
            drv = C.SynapseDriverOnHICANN.from_enum(d)
            out.append(DriverAssignment(C.SynapseDriverOnWafer(drv, self.hicann), self.vertical,
                                        line_select_for(drv, self.vertical), tuple(blocks), self.route_index))
        return out


def _allocate_group(result: MappingResult, graph: RoutingGraph, route_index: int, items,
                    weight_max: float) -> None:
    r: Route = result.routes[route_index]
    terminal = r.terminal
    group = _Group(graph, r.target.enum, terminal.inner.enum - _NH, route_index)
    where = chip_name(r.target, result.wafer)
    for conn, address, ln in items:
        got = group.place(address, ln)
        if isinstance(got, str):
            result.losses.append(Loss(conn, got, where))
            continue
        syn, row_enum = got
        drv = C.SynapseRowOnHICANN.from_enum(row_enum).to_driver()
        result.synapses[conn.key] = SynapseAssignment(
            conn, syn, address & 15, calib.weight_code(conn.weight, weight_max),
            C.SynapseDriverOnWafer(drv, r.target), route_index)
    result.drivers.extend(group.assignments())


def _lose(result: MappingResult, items, reason: str, where: str = "") -> None:
    for conn, _, _ in items:
        result.losses.append(Loss(conn, reason, where))


def allocate_synapses(net: NetworkDescription, result: MappingResult, graph: RoutingGraph,
                      weight_max: float | None = None) -> MappingResult:
    """Allocate synapses for every routed group; everything else becomes a loss."""
    weight_max = net.weight_max if weight_max is None else weight_max
    by_key = {(r.sender, r.target.enum): i for i, r in enumerate(result.routes)}
    for key, items in connection_groups(net, result).items():
        if key is None:
            _lose(result, items, "unmapped")
            continue
        idx = by_key.get(key)
        if idx is None:
            _lose(result, items, "unroutable", chip_name(C.HICANNOnWafer.from_enum(key[1]), result.wafer))
            continue
        _allocate_group(result, graph, idx, items, weight_max)
    result.total_connections = len(net.connections())
    return result


def route_and_allocate(net: NetworkDescription, result: MappingResult, graph: RoutingGraph,
                       max_switches: int = DEFAULT_MAX_SWITCHES, weight_max: float | None = None) -> MappingResult:
    """Route each group and allocate its synapses before the next group is routed.

    Interleaving keeps the driver check of the route search exact: the
    drivers a terminal line offers are taken before another route can end
    on a line sharing them.  Unroutable groups become losses.
    """
    weight_max = net.weight_max if weight_max is None else weight_max
    for sender in result.senders():
        graph.reserve(sender, sender)
    for key, items in connection_groups(net, result).items():
        if key is None:
            _lose(result, items, "unmapped")
            continue
        sender, chip = key
        target = C.HICANNOnWafer.from_enum(chip)
        hemis = {ln.hemisphere for _, _, ln in items}
        try:
            r = route(graph, _sender_line(sender), target, max_switches, hemis, sender)
        except Unroutable:
            _lose(result, items, "unroutable", chip_name(target, result.wafer))
            continue
        result.routes.append(r)
        _allocate_group(result, graph, len(result.routes) - 1, items, weight_max)
    result.max_switches = max_switches
    result.total_connections = len(net.connections())
    return result


__all__ = ["connection_groups", "route_all", "allocate_synapses", "route_and_allocate", "Connection"]
