"""Bus-line routing graph and breadth-first route search.

Vertices are the bus lines of each chip, keyed ``(chip enum, line enum)``
with line enums as in :class:`~waferkit.coord.BusLineOnHICANN` (0..63
horizontal, 64..319 vertical).  Edges are the legal crossbar switches of a
chip and the continuations of a line into the same line of the neighboring
chip (horizontal lines east-west, vertical lines north-south).  Flagged
chips and lines are not part of the graph.
"""
from __future__ import annotations

from collections import deque

from .. import coord as C
from .. import hal
from ..availability import AvailabilityDb
from ..simdevice.fabric import driver_lines
from .placement import MappingError, chip_name
from .result import Route

DEFAULT_MAX_SWITCHES = 3
_NH = C.N_HLINES


class Unroutable(MappingError):
    pass


def _driver_candidates() -> dict[int, list[int]]:
    """Vertical line (0..255) -> hemisphere-local driver indices able to listen to it."""
    out: dict[int, list[int]] = {v: [] for v in range(C.N_VLINES)}
    for i in range(C.N_DRIVERS_PER_HEMISPHERE):
        for v in driver_lines(i):
            out[v].append(i)
    return out


_CANDIDATES = _driver_candidates()
_SWITCH_V = {h: [_NH + v for v in hal.legal_verticals(h)] for h in range(_NH)}
_SWITCH_H = {}
for _h, _vs in _SWITCH_V.items():
    for _v in _vs:
        _SWITCH_H.setdefault(_v, []).append(_h)


class RoutingGraph:
    """Bus lines of a set of chips minus everything flagged unavailable.

    ``owner`` records which sender holds an allocated line; an allocated
    line is out of the graph for every other route.
    """

    def __init__(self, availability: AvailabilityDb | None = None, chips=None, wafer: int | None = None):
        self.availability = availability
        self.wafer = wafer if wafer is not None else (availability.wafer if availability is not None else 0)
        pool = C.HICANNOnWafer.iter_all() if chips is None else chips
        self.chips = frozenset(h.enum for h in pool if availability is None or availability.is_usable(h))
        self._blocked: dict[int, set[int]] = {}
        self._bad_drivers: dict[int, set[int]] = {}
        if availability is not None:
            for f in availability.flags(C.BusLineOnWafer):
                self._blocked.setdefault(f.outer.enum, set()).add(f.inner.enum)
            for f in availability.flags(C.SynapseDriverOnWafer):
                self._bad_drivers.setdefault(f.outer.enum, set()).add(f.inner.enum)
        self._neighbors = {}
        for e in self.chips:
            h = C.HICANNOnWafer.from_enum(e)
            for d in C.DIRECTIONS:
                try:
                    n = h.neighbor(d).enum
                except C.NeighborOutsideWafer:
                    continue
                if n in self.chips:
                    self._neighbors[(e, d)] = n
        self.owner: dict[tuple[int, int], object] = {}
        self.used_drivers: set[tuple[int, int]] = set()

    # ------------------------------------------------------------ structure

    def has_vertex(self, vertex) -> bool:
        chip, line = vertex
        return chip in self.chips and 0 <= line < C.N_BUSLINES and line not in self._blocked.get(chip, ())

    def edges(self, vertex) -> list[tuple[tuple[int, int], bool]]:
        """Sorted (neighbor vertex, is_switch) pairs of a vertex in the graph."""
        chip, line = vertex
        out = []
        if line < _NH:
            out += [((chip, v), True) for v in _SWITCH_V[line]]
            for d in ("east", "west"):
                n = self._neighbors.get((chip, d))
                if n is not None:
                    out.append(((n, line), False))
        else:
            out += [((chip, h), True) for h in _SWITCH_H[line]]
            for d in ("north", "south"):
                n = self._neighbors.get((chip, d))
                if n is not None:
                    out.append(((n, line), False))
        return sorted(e for e in out if self.has_vertex(e[0]))

    def driver_usable(self, chip: int, driver_enum: int) -> bool:
        return (chip, driver_enum) not in self.used_drivers and driver_enum not in self._bad_drivers.get(chip, ())

    def free_drivers(self, chip: int, vertical: int, hemisphere: int) -> list[int]:
        """Driver enums of ``hemisphere`` that can listen to ``vertical`` and are still free."""
        base = hemisphere * C.N_DRIVERS_PER_HEMISPHERE
        return [base + i for i in _CANDIDATES[vertical] if self.driver_usable(chip, base + i)]

    def take_driver(self, chip: int, vertical: int, hemisphere: int) -> int | None:
        free = self.free_drivers(chip, vertical, hemisphere)
        if not free:
            return None
        self.used_drivers.add((chip, free[0]))
        return free[0]

    # ------------------------------------------------------------ allocation

    def reserve(self, vertex, owner) -> None:
        """Hand a sending line to ``owner`` so no other route crosses it."""
        held = self.owner.get(vertex)
        if held is not None and held != owner:
            raise MappingError(f"bus line {vertex} is already held by {held}")
        self.owner[vertex] = owner

    def is_free(self, vertex) -> bool:
        return vertex not in self.owner

    def _terminal(self, vertex, to_chip: int, hemispheres) -> bool:
        chip, line = vertex
        if chip != to_chip or line < _NH:
            return False
        v = line - _NH
        return all(self.free_drivers(chip, v, hemi) for hemi in hemispheres) and \
            any(self.free_drivers(chip, v, hemi) for hemi in range(C.N_HEMISPHERES))


def _vertex(line: C.BusLineOnWafer) -> tuple[int, int]:
    return (line.outer.enum, line.inner.enum)


def _line(vertex) -> C.BusLineOnWafer:
    return C.BusLineOnWafer(C.BusLineOnHICANN.from_enum(vertex[1]), C.HICANNOnWafer.from_enum(vertex[0]))


def route(graph: RoutingGraph, from_line: C.BusLineOnWafer, to_chip: C.HICANNOnWafer,
          max_switches: int = DEFAULT_MAX_SWITCHES, hemispheres=(), owner=None) -> Route:
    """Fewest-hop path from ``from_line`` to a vertical line of ``to_chip`` with a free driver.

    At most ``max_switches`` crossbar switches are used.  Every line of the
    path is allocated to ``owner`` (default: the start line itself), so later
    searches route around it; the start line may be shared by routes of the
    same owner.  ``hemispheres`` lists the hemispheres the terminal line must
    still have a free driver in.
    """
    start = _vertex(from_line)
    owner = start if owner is None else owner
    target = to_chip.enum
    where = f"{C.format_short(C.HICANNGlobal(from_line.outer, C.Wafer(graph.wafer)))}" \
            f" line {from_line.inner.enum} -> {chip_name(to_chip, graph.wafer)}"
    if not graph.has_vertex(start):
        raise Unroutable(f"{where}: start line is not in the routing graph")
    if graph.owner.get(start, owner) != owner:
        raise Unroutable(f"{where}: start line belongs to another sender")
    if target not in graph.chips:
        raise Unroutable(f"{where}: target chip is not in the routing graph")
    hemispheres = tuple(sorted(set(hemispheres)))

    state0 = (start, 0)
    parent = {state0: None}
    best = {start: 0}  # fewest switches a vertex was reached with
    queue = deque([state0])
    found = None
    while queue and found is None:
        state = queue.popleft()
        vertex, used = state
        for nxt, is_switch in graph.edges(vertex):
            k = used + is_switch
            if k > max_switches or not graph.is_free(nxt) or best.get(nxt, max_switches + 1) <= k:
                continue
            best[nxt] = k
            parent[(nxt, k)] = state
            if graph._terminal(nxt, target, hemispheres):
                found = (nxt, k)
                break
            queue.append((nxt, k))
    if found is None:
        raise Unroutable(f"{where}: no path with at most {max_switches} switches")
    path = []
    state = found
    while state is not None:
        path.append(state[0])
        state = parent[state]
    path.reverse()
    for vertex in path:
        graph.owner[vertex] = owner
    return Route(start, to_chip, tuple(_line(v) for v in path))
