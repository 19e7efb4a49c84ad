"""The mapping intermediate representation and its lookups in both directions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import NamedTuple

from .. import coord as C
from .network import BioNeuron, Connection

FORMAT = "waferkit.mapping"
VERSION = 1


class NotMapped(LookupError):
    """The entity has no counterpart in the mapping."""


@dataclass(frozen=True, order=True)
class LogicalNeuron:
    """``size`` contiguous neuron circuits of one hemisphere, starting at column ``x``."""

    chip: C.HICANNOnWafer
    hemisphere: int
    x: int
    size: int

    def circuits(self) -> tuple[C.NeuronOnWafer, ...]:
        return tuple(C.NeuronOnWafer(C.NeuronOnHICANN(self.x + k, self.hemisphere), self.chip)
                     for k in range(self.size))

    @property
    def primary(self) -> C.NeuronOnWafer:
        """The circuit that carries parameters, synaptic input and the spike output."""
        return C.NeuronOnWafer(C.NeuronOnHICANN(self.x, self.hemisphere), self.chip)

    def __contains__(self, circuit) -> bool:
        return (isinstance(circuit, C.NeuronOnWafer) and circuit.outer == self.chip
                and circuit.inner.y == self.hemisphere and self.x <= circuit.inner.x < self.x + self.size)

    def __str__(self):
        return f"{C.format_short(self.primary)}+{self.size}"


class Endpoint(NamedTuple):
    """A 6-bit event address on a horizontal bus line of a chip."""

    chip: C.HICANNOnWafer
    line: int
    address: int

    @property
    def sender(self) -> tuple[int, int]:
        return (self.chip.enum, self.line)


@dataclass(frozen=True)
class Route:
    """Ordered bus lines from a sender's horizontal line to a vertical line of the target chip."""

    sender: tuple[int, int]  # (chip enum, horizontal line)
    target: C.HICANNOnWafer
    path: tuple[C.BusLineOnWafer, ...]

    @property
    def switches(self) -> int:
        return sum(1 for a, b in zip(self.path, self.path[1:]) if a.outer == b.outer)

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    @property
    def chip_hops(self) -> int:
        return sum(1 for a, b in zip(self.path, self.path[1:]) if a.outer != b.outer)

    @property
    def terminal(self) -> C.BusLineOnWafer:
        return self.path[-1]


@dataclass(frozen=True)
class DriverAssignment:
    driver: C.SynapseDriverOnWafer
    vertical: int  # 0..255
    line_select: int
    input_selects: tuple[int | None, int | None]  # per row; None = row unused
    route: int


@dataclass(frozen=True)
class SynapseAssignment:
    connection: Connection
    synapse: C.SynapseOnWafer
    decoder: int
    weight: int
    driver: C.SynapseDriverOnWafer
    route: int


class Loss(NamedTuple):
    connection: Connection
    reason: str
    where: str  # short-format chip, or "" when not chip-specific


@dataclass
class MappingResult:
    wafer: int = 0
    neuron_size: int = 4
    max_switches: int = 3
    placement: dict = field(default_factory=dict)      # BioNeuron -> LogicalNeuron
    circuits: dict = field(default_factory=dict)       # NeuronOnWafer -> BioNeuron
    injections: dict = field(default_factory=dict)     # source BioNeuron -> Endpoint
    outputs: dict = field(default_factory=dict)        # neuron BioNeuron -> Endpoint
    routes: list = field(default_factory=list)
    drivers: list = field(default_factory=list)
    synapses: dict = field(default_factory=dict)       # (projection, index) -> SynapseAssignment
    losses: list = field(default_factory=list)
    total_connections: int = 0
    finalized: bool = False

    # ------------------------------------------------------------ derived

    def senders(self) -> dict[tuple[int, int], dict[int, BioNeuron]]:
        """(chip enum, line) -> {address: bio neuron} for every sending line."""
        out: dict = {}
        for table in (self.injections, self.outputs):
            for bio, ep in table.items():
                out.setdefault(ep.sender, {})[ep.address] = bio
        return out

    def chips(self) -> list[C.HICANNOnWafer]:
        used = {ln.chip.enum for ln in self.placement.values()}
        used |= {ep.chip.enum for ep in self.injections.values()}
        used |= {r.target.enum for r in self.routes}
        used |= {line.outer.enum for r in self.routes for line in r.path}
        return [C.HICANNOnWafer.from_enum(e) for e in sorted(used)]

    def neurons_per_chip(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for ln in self.placement.values():
            counts[ln.chip.enum] = counts.get(ln.chip.enum, 0) + 1
        return counts

    @property
    def realized(self) -> int:
        return len(self.synapses)

    def loss_report(self) -> dict:
        by_reason: dict[str, int] = {}
        for loss in self.losses:
            by_reason[loss.reason] = by_reason.get(loss.reason, 0) + 1
        return {"total": self.total_connections, "realized": self.realized,
                "lost": len(self.losses), "by_reason": by_reason}

    def finalize(self) -> "MappingResult":
        """Freeze the tables; the result is read-only afterwards."""
        if not self.finalized:
            for name in ("placement", "circuits", "injections", "outputs", "synapses"):
                object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))
            for name in ("routes", "drivers", "losses"):
                object.__setattr__(self, name, tuple(getattr(self, name)))
            object.__setattr__(self, "finalized", True)
        return self

    def __setattr__(self, name, value):
        if getattr(self, "finalized", False):
            raise AttributeError("a finalized MappingResult is read-only")
        object.__setattr__(self, name, value)

    # ------------------------------------------------------------ JSON

    def to_dict(self) -> dict:
        def ep(e):
            return [e.chip.enum, e.line, e.address]

        def conn(c):
            return [c.projection, c.index, c.pre, c.post, c.weight]

        return {
            "format": FORMAT,
            "version": VERSION,
            "wafer": self.wafer,
            "neuron_size": self.neuron_size,
            "max_switches": self.max_switches,
            "placement": [[b.population, b.index, ln.chip.enum, ln.hemisphere, ln.x, ln.size]
                          for b, ln in sorted(self.placement.items())],
            "injections": [[b.population, b.index, *ep(e)] for b, e in sorted(self.injections.items())],
            "outputs": [[b.population, b.index, *ep(e)] for b, e in sorted(self.outputs.items())],
            "routes": [{"sender": list(r.sender), "target": r.target.enum,
                        "path": [[line.outer.enum, line.inner.enum] for line in r.path]} for r in self.routes],
            "drivers": [[d.driver.outer.enum, d.driver.inner.enum, d.vertical, d.line_select,
                         list(d.input_selects), d.route] for d in self.drivers],
            "synapses": [[*conn(s.connection), s.synapse.outer.enum, s.synapse.inner.enum, s.decoder, s.weight,
                          s.driver.inner.enum, s.route] for _, s in sorted(self.synapses.items())],
            "losses": [[*conn(loss.connection), loss.reason, loss.where] for loss in self.losses],
            "total_connections": self.total_connections,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "MappingResult":
        if raw.get("format") != FORMAT:
            raise ValueError("not a mapping result")
        if raw.get("version") != VERSION:
            raise ValueError(f"unsupported mapping result version {raw.get('version')}")
        H = C.HICANNOnWafer.from_enum
        r = cls(wafer=raw["wafer"], neuron_size=raw["neuron_size"], max_switches=raw["max_switches"])
        for pop, i, chip, hemi, x, size in raw["placement"]:
            ln = LogicalNeuron(H(chip), hemi, x, size)
            r.placement[BioNeuron(pop, i)] = ln
            for c in ln.circuits():
                r.circuits[c] = BioNeuron(pop, i)
        for pop, i, chip, line, addr in raw["injections"]:
            r.injections[BioNeuron(pop, i)] = Endpoint(H(chip), line, addr)
        for pop, i, chip, line, addr in raw["outputs"]:
            r.outputs[BioNeuron(pop, i)] = Endpoint(H(chip), line, addr)
        for entry in raw["routes"]:
            path = tuple(C.BusLineOnWafer(C.BusLineOnHICANN.from_enum(b), H(h)) for h, b in entry["path"])
            r.routes.append(Route(tuple(entry["sender"]), H(entry["target"]), path))
        for chip, drv, vertical, select, rows, route in raw["drivers"]:
            r.drivers.append(DriverAssignment(C.SynapseDriverOnWafer(C.SynapseDriverOnHICANN.from_enum(drv), H(chip)),
                                              vertical, select, tuple(rows), route))
        for proj, idx, pre, post, w, chip, syn, dec, code, drv, route in raw["synapses"]:
            c = Connection(proj, idx, pre, post, w)
            r.synapses[c.key] = SynapseAssignment(
                c, C.SynapseOnWafer(C.SynapseOnHICANN.from_enum(syn), H(chip)), dec, code,
                C.SynapseDriverOnWafer(C.SynapseDriverOnHICANN.from_enum(drv), H(chip)), route)
        for proj, idx, pre, post, w, reason, where in raw["losses"]:
            r.losses.append(Loss(Connection(proj, idx, pre, post, w), reason, where))
        r.total_connections = raw["total_connections"]
        return r.finalize()

    @classmethod
    def from_json(cls, text: str) -> "MappingResult":
        return cls.from_dict(json.loads(text))


def find(result: MappingResult, entity):
    """Linked entities of a model or hardware entity.

    BioNeuron -> LogicalNeuron (or the injection Endpoint of a source neuron);
    LogicalNeuron or NeuronOnWafer -> BioNeuron; Connection or its
    (projection, index) key -> SynapseOnWafer; SynapseOnWafer -> Connection;
    population id -> list of LogicalNeurons.
    """
    try:
        if isinstance(entity, BioNeuron):
            if entity in result.placement:
                return result.placement[entity]
            return result.injections[entity]
        if isinstance(entity, LogicalNeuron):
            bio = result.circuits[entity.primary]
            if result.placement[bio] != entity:
                raise KeyError(entity)
            return bio
        if isinstance(entity, C.NeuronOnWafer):
            return result.circuits[entity]
        if isinstance(entity, Connection):
            return result.synapses[entity.key].synapse
        if isinstance(entity, C.SynapseOnWafer):
            for s in result.synapses.values():
                if s.synapse == entity:
                    return s.connection
            raise KeyError(entity)
        if isinstance(entity, str):
            found = [ln for b, ln in sorted(result.placement.items()) if b.population == entity]
            if not found:
                raise KeyError(entity)
            return found
        if isinstance(entity, tuple) and len(entity) == 2:
            return result.synapses[tuple(entity)].synapse
    except (KeyError, TypeError):
        pass
    shown = C.format_short(entity) if type(entity) in C.SHORT_FORMAT_KINDS else repr(entity)
    raise NotMapped(f"{shown} is not mapped")
