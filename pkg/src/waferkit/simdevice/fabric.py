"""Event propagation through the configured bus-line fabric.

Bus lines are nodes: per chip 64 horizontal and 256 vertical lines.  A
closed crossbar switch joins a horizontal and a vertical line of the same
chip; a repeater joins a line to the same line of the east (horizontal) or
south (vertical) neighbor.  Every traversed switch or repeater costs one
tick.  A synapse driver listens to one vertical line, picked by its
``line_select`` among the lines ``v`` with ``(v % 128) % 16 == index % 16``.

An event carries a 6-bit address.  A driver row accepts it when the row's
``input_select`` equals ``address >> 4``; the synapses of that row whose
decoder equals ``address & 15`` inject ``weight / 15 * i_gmax / (gmax_div + 1)``
into the neuron of their column.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .. import coord as C
from .. import hal
from .registers import RegisterFile

_R = hal.REGION
_PERIOD = C.TOPOLOGY.driver_line_period


def driver_lines(index: int) -> list[int]:
    """Vertical line enums (0..255) a driver with hemisphere-local ``index`` can listen to, ascending."""
    return [v for v in range(C.N_VLINES) if (v % C.N_VLINES_PER_SIDE) % _PERIOD == index % _PERIOD]


_DRIVER_LINES = [driver_lines(i) for i in range(C.N_DRIVERS_PER_HEMISPHERE)]


def driver_line(driver: C.SynapseDriverOnHICANN, line_select: int) -> int:
    return _DRIVER_LINES[driver.index][line_select]


def line_select_for(driver: C.SynapseDriverOnHICANN, vertical: int) -> int | None:
    lines = _DRIVER_LINES[driver.index]
    return lines.index(vertical) if vertical in lines else None


_NEIGHBORS = {}
for _h in C.HICANNOnWafer.iter_all():
    for _d in C.DIRECTIONS:
        try:
            _NEIGHBORS[(_h.enum, _d)] = _h.neighbor(_d).enum
        except C.NeighborOutsideWafer:
            pass


def _bits(words) -> list[int]:
    out = []
    for k, w in enumerate(np.asarray(words).tolist()):
        while w:
            low = w & -w
            out.append((k << 5) + low.bit_length() - 1)
            w ^= low
    return out


@dataclass
class ChipFabric:
    h_to_v: dict  # h -> list of v
    v_to_h: dict
    east: frozenset
    south: frozenset
    drivers_on_line: dict  # v -> list of (driver enum, row configs)
    input_lines: frozenset
    outputs: dict  # neuron -> (line, address, record)
    readout: tuple | None  # (neuron,) when enabled
    clock: bool


class Fabric:
    """Decoded view of the fabric registers; rebuilt when the register file changes."""

    def __init__(self, regs: RegisterFile):
        self.regs = regs
        self.version = regs.version
        self.chips: dict[int, ChipFabric] = {}
        self.malformed: list[str] = []
        self._routes: dict = {}
        for chip in sorted({c for (c, r) in regs.blocks if r != _R["fpga"]}):
            self.chips[chip] = self._decode_chip(chip)

    def _block(self, chip, region):
        arr = self.regs.block(chip, region)
        return arr if arr is not None else np.zeros(0, dtype=np.uint32)

    def _decode_chip(self, chip: int) -> ChipFabric:
        h_to_v, v_to_h = {}, {}
        xbar = self._block(chip, _R["crossbar"])
        for i in np.flatnonzero(xbar).tolist():
            h, k = divmod(i, hal.XBAR_WORDS)
            for b in _bits([xbar[i]]):
                v = (k << 5) + b
                if not hal.legal_switch(h, v):
                    self.malformed.append(f"chip {chip}: illegal switch bit H{h}/V{v}")
                    continue
                h_to_v.setdefault(h, []).append(v)
                v_to_h.setdefault(v, []).append(h)
        rep = self._block(chip, _R["repeater"])
        nh = C.N_HLINES // 32
        east = frozenset(_bits(rep[hal.REP_H:hal.REP_H + nh])) if len(rep) else frozenset()
        south = frozenset(_bits(rep[hal.REP_V:hal.REP_V + C.N_VLINES // 32])) if len(rep) else frozenset()

        drivers_on_line = {}
        drv = self._block(chip, _R["driver"])
        for d in np.flatnonzero(drv).tolist():
            try:
                f = hal.DRIVER_LAYOUT.unpack(int(drv[d]))
            except hal.MalformedWords:
                self.malformed.append(f"chip {chip}: malformed driver word {d}")
                continue
            if not f["enable"]:
                continue
            coord = C.SynapseDriverOnHICANN.from_enum(d)
            v = driver_line(coord, f["line_select"])
            rows = ((f["row0_input_select"], f["row0_gmax_div"]), (f["row1_input_select"], f["row1_gmax_div"]))
            drivers_on_line.setdefault(v, []).append((d, rows))

        merger = self._block(chip, _R["merger"])
        input_lines = frozenset(_bits(merger[hal.MERGER_IN:hal.MERGER_IN + nh])) if len(merger) else frozenset()
        outputs = {}
        if len(merger):
            out_words = merger[hal.MERGER_OUT:hal.MERGER_OUT + C.N_NEURONS]
            for n in np.flatnonzero(out_words).tolist():
                try:
                    f = hal.MERGER_LAYOUT.unpack(int(out_words[n]))
                except hal.MalformedWords:
                    self.malformed.append(f"chip {chip}: malformed merger word {n}")
                    continue
                if f["enable"]:
                    outputs[n] = (f["line"], f["address"], bool(f["record"]))
        readout = None
        ro = self._block(chip, _R["readout"])
        if len(ro) and ro[0]:
            try:
                f = hal.READOUT_LAYOUT.unpack(int(ro[0]))
                if f["enable"]:
                    readout = (f["neuron"],)
            except hal.MalformedWords:
                self.malformed.append(f"chip {chip}: malformed readout word")
        ctl = self._block(chip, _R["control"])
        clock = False
        if len(ctl):
            try:
                clock = bool(hal.CLOCK_LAYOUT.unpack(int(ctl[hal.CLOCK_OFFSET]))["enable"])
            except hal.MalformedWords:
                self.malformed.append(f"chip {chip}: malformed clock word")
        return ChipFabric(h_to_v, v_to_h, east, south, drivers_on_line, input_lines, outputs, readout, clock)

    # ----------------------------------------------------------- propagation

    def _adjacent(self, node):
        chip, is_h, idx = node
        cf = self.chips.get(chip)
        if is_h:
            if cf is not None:
                for v in cf.h_to_v.get(idx, ()):
                    yield (chip, False, v)
                if idx in cf.east and (chip, "east") in _NEIGHBORS:
                    yield (_NEIGHBORS[(chip, "east")], True, idx)
            w = _NEIGHBORS.get((chip, "west"))
            if w is not None and w in self.chips and idx in self.chips[w].east:
                yield (w, True, idx)
        else:
            if cf is not None:
                for h in cf.v_to_h.get(idx, ()):
                    yield (chip, True, h)
                if idx in cf.south and (chip, "south") in _NEIGHBORS:
                    yield (_NEIGHBORS[(chip, "south")], False, idx)
            n = _NEIGHBORS.get((chip, "north"))
            if n is not None and n in self.chips and idx in self.chips[n].south:
                yield (n, False, idx)

    def reach(self, chip: int, hline: int) -> dict:
        """Vertical lines reachable from a horizontal line: {(chip, v): ticks}."""
        start = (chip, True, hline)
        dist = {start: 0}
        queue = deque([start])
        out = {}
        while queue:
            node = queue.popleft()
            for nxt in self._adjacent(node):
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
                    if not nxt[1]:
                        out[(nxt[0], nxt[2])] = dist[nxt]
        return out

    def targets(self, chip: int, hline: int, address: int, synapses):
        """Synaptic targets of an event: (reached_driver, [(ticks, chip, neuron, weight, gmax_div), ...]).

        ``synapses(chip)`` returns the (448, 256) weight and decoder arrays of a chip
        in logical row order.
        """
        key = (chip, hline, address)
        hit = self._routes.get(key)
        if hit is not None:
            return hit
        reached = False
        found = []
        hi, lo = address >> 4, address & 15
        for (c, v), ticks in sorted(self.reach(chip, hline).items()):
            cf = self.chips.get(c)
            if cf is None:
                continue
            for d, rows in cf.drivers_on_line.get(v, ()):
                reached = True
                drv = C.SynapseDriverOnHICANN.from_enum(d)
                weights, decoders = synapses(c)
                for k, (select, gmax_div) in enumerate(rows):
                    if select != hi:
                        continue
                    row = drv.rows()[k]
                    cols = np.flatnonzero((decoders[row.enum] == lo) & (weights[row.enum] > 0))
                    for col in cols.tolist():
                        neuron = C.NeuronOnHICANN(col, drv.hemisphere).enum
                        found.append((ticks, c, neuron, int(weights[row.enum, col]), gmax_div))
        hit = self._routes[key] = (reached, found)
        return hit
