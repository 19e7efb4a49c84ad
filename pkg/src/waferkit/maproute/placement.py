"""Greedy neuron placement and assignment of sending bus lines."""
from __future__ import annotations

import numpy as np

from .. import coord as C
from ..availability import AvailabilityDb
from .network import BioNeuron, NetworkDescription
from .result import Endpoint, LogicalNeuron, MappingResult

DEFAULT_NEURON_SIZE = 4
# source events per biological millisecond one injection line can carry
DEFAULT_INPUT_CAPACITY = 1000.0
ADDRESSES_PER_LINE = 64
INPUT_LINE = C.TOPOLOGY.input_line


class MappingError(Exception):
    pass


class PlacementOverflow(MappingError):
    pass


class InputCapacityExceeded(MappingError):
    pass


class NoTargets(MappingError):
    pass


def chip_name(chip: C.HICANNOnWafer, wafer: int) -> str:
    return C.format_short(C.HICANNGlobal(chip, C.Wafer(wafer)))


class _Usage:
    """Per-chip free/usable circuit masks, created lazily."""

    def __init__(self, availability: AvailabilityDb | None):
        self.availability = availability
        self.free: dict[int, np.ndarray] = {}

    def chip_usable(self, chip: C.HICANNOnWafer) -> bool:
        return self.availability is None or self.availability.is_usable(chip)

    def mask(self, chip: C.HICANNOnWafer) -> np.ndarray:
        m = self.free.get(chip.enum)
        if m is None:
            m = np.ones(C.N_NEURONS, dtype=bool)
            if not self.chip_usable(chip):
                m[:] = False
            elif self.availability is not None:
                for n in C.NeuronOnHICANN.iter_all():
                    if not self.availability.is_usable(C.NeuronOnWafer(n, chip)):
                        m[n.enum] = False
            self.free[chip.enum] = m
        return m

    def first_fit(self, chip: C.HICANNOnWafer, size: int) -> LogicalNeuron | None:
        """Lowest-enum run of ``size`` free circuits within one hemisphere."""
        m = self.mask(chip)
        for hemi in range(C.N_HEMISPHERES):
            row = m[hemi * C.N_COLUMNS:(hemi + 1) * C.N_COLUMNS]
            run = 0
            for x in range(C.N_COLUMNS):
                run = run + 1 if row[x] else 0
                if run == size:
                    start = x - size + 1
                    row[start:x + 1] = False
                    return LogicalNeuron(chip, hemi, start, size)
        return None


def place(net: NetworkDescription, constraints=None, availability: AvailabilityDb | None = None,
          neuron_size: int = DEFAULT_NEURON_SIZE, wafer: int | None = None) -> MappingResult:
    """Place every population; constrained ones first, the rest greedily in chip enum order.

    No back-tracking: a population that does not fit raises PlacementOverflow.
    """
    if not 1 <= neuron_size <= C.N_COLUMNS:
        raise ValueError(f"neuron_size must be in [1, {C.N_COLUMNS}]")
    if wafer is None:
        wafer = availability.wafer if availability is not None else 0
    constraints = net.constraints if constraints is None else constraints
    for pid, chips in constraints.items():
        if pid not in net.populations:
            raise MappingError(f"constraint for unknown population {pid!r}")
        if not chips:
            raise MappingError(f"constraint for {pid!r} lists no chip")
        for h in chips:
            if type(h) is not C.HICANNOnWafer:
                raise MappingError(f"constraint for {pid!r}: {h!r} is not a HICANNOnWafer")

    result = MappingResult(wafer=wafer, neuron_size=neuron_size)
    usage = _Usage(availability)

    def put(bio: BioNeuron, ln: LogicalNeuron):
        result.placement[bio] = ln
        for c in ln.circuits():
            result.circuits[c] = bio

    constrained = [p for p in net.populations.values() if p.id in constraints]
    for pop in constrained:
        chips = sorted(set(constraints[pop.id]), key=lambda h: h.enum)
        k = 0
        for bio in pop.neurons():
            ln = None
            while k < len(chips):
                ln = usage.first_fit(chips[k], neuron_size)
                if ln is not None:
                    break
                k += 1
            if ln is None:
                names = ", ".join(chip_name(h, wafer) for h in chips)
                raise PlacementOverflow(f"population {pop.id!r} ({pop.size} neurons of {neuron_size} circuits) "
                                        f"does not fit on {names}")
            put(bio, ln)

    all_chips = list(C.HICANNOnWafer.iter_all())
    k = 0
    for pop in net.populations.values():
        if pop.id in constraints:
            continue
        for bio in pop.neurons():
            ln = None
            while k < len(all_chips):
                ln = usage.first_fit(all_chips[k], neuron_size)
                if ln is not None:
                    break
                k += 1
            if ln is None:
                raise PlacementOverflow(f"population {pop.id!r} does not fit on {C.format_short(C.Wafer(wafer))}")
            put(bio, ln)
    result.total_connections = len(net.connections())
    return result


def _targets_of(net: NetworkDescription, result: MappingResult, name: str) -> set[int]:
    chips = set()
    for proj in net.projections:
        if proj.source != name:
            continue
        for c in proj.connections:
            ln = result.placement.get(BioNeuron(proj.target, c.post))
            if ln is not None:
                chips.add(ln.chip.enum)
    return chips


def _distance(a: C.HICANNOnWafer, b: C.HICANNOnWafer) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


def insert_inputs(net: NetworkDescription, result: MappingResult, availability: AvailabilityDb | None = None,
                  capacity: float = DEFAULT_INPUT_CAPACITY) -> MappingResult:
    """Give each spike source an injection line as close as possible to its targets.

    Sources sharing an injection line get consecutive addresses.  A line
    carries at most 64 addresses and ``capacity`` events per biological
    millisecond; a source that does not fit moves to the next-nearest chip.
    """
    load: dict[int, list] = {}  # chip enum -> [addresses used, events]
    candidates = []
    for h in C.HICANNOnWafer.iter_all():
        if availability is not None:
            line = C.BusLineOnWafer(C.BusLineOnHICANN.horizontal(INPUT_LINE), h)
            if not availability.is_usable(line):
                continue
        candidates.append(h)
    for src in net.sources.values():
        targets = [C.HICANNOnWafer.from_enum(e) for e in sorted(_targets_of(net, result, src.id))]
        if not targets:
            if any(p.source == src.id and p.connections for p in net.projections):
                raise MappingError(f"source {src.id!r} projects to unplaced neurons")
            raise NoTargets(f"source {src.id!r} has no targets")
        rate = src.event_count / net.runtime
        if src.size > ADDRESSES_PER_LINE or rate > capacity:
            raise InputCapacityExceeded(
                f"source {src.id!r} needs {src.size} addresses and {rate:g} events/ms; "
                f"one injection line holds {ADDRESSES_PER_LINE} and {capacity:g}")
        ranked = sorted(candidates, key=lambda h: (sum(_distance(h, t) for t in targets), h.enum))
        for h in ranked:
            used, events = load.get(h.enum, (0, 0.0))
            if used + src.size <= ADDRESSES_PER_LINE and events + rate <= capacity:
                for bio in src.neurons():
                    result.injections[bio] = Endpoint(h, INPUT_LINE, used + bio.index)
                load[h.enum] = [used + src.size, events + rate]
                break
        else:
            raise InputCapacityExceeded(f"no injection line left for source {src.id!r}")
    return result


def assign_outputs(net: NetworkDescription, result: MappingResult,
                   availability: AvailabilityDb | None = None) -> MappingResult:
    """Give every recorded or projecting neuron a (line, address) on its chip.

    Lines are taken lowest first from the horizontal lines other than the
    input line, 64 addresses each, skipping unusable lines.
    """
    senders = {p.source for p in net.projections if p.connections and p.source in net.populations}
    next_slot: dict[int, list] = {}  # chip -> [line, next address]
    for pop in net.populations.values():
        if not (pop.record_spikes or pop.id in senders):
            continue
        for bio in pop.neurons():
            chip = result.placement[bio].chip
            slot = next_slot.get(chip.enum)
            if slot is None or slot[1] >= ADDRESSES_PER_LINE:
                start = INPUT_LINE + 1 if slot is None else slot[0] + 1
                line = _free_output_line(chip, start, availability)
                if line is None:
                    raise PlacementOverflow(f"no output line left on {chip_name(chip, result.wafer)}")
                slot = next_slot[chip.enum] = [line, 0]
            result.outputs[bio] = Endpoint(chip, slot[0], slot[1])
            slot[1] += 1
    return result


def _free_output_line(chip, start, availability):
    for h in range(start, C.N_HLINES):
        if h == INPUT_LINE:
            continue
        if availability is None or availability.is_usable(C.BusLineOnWafer(C.BusLineOnHICANN.horizontal(h), chip)):
            return h
    return None
