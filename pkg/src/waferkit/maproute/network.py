"""Declarative network descriptions and their JSON form.

A description holds populations of model neurons, spike sources with
explicit spike times, projections with per-connection weights, optional
placement constraints, and the biological runtime.  Times are in
biological milliseconds, weights in nA, neuron parameters use the
biological names of :data:`waferkit.calib.BIO_DEFAULTS`.

JSON layout::

    {
      "populations": [{"id": "pop", "size": 2, "params": {"tau_m": 10.0},
                       "record": {"spikes": true, "v": [0]}}],
      "sources": [{"id": "stim", "size": 1, "spike_times": [[10.0, 11.0]]}],
      "projections": [{"id": "p0", "source": "stim", "target": "pop",
                       "connections": [[0, 0, 0.2], [0, 1, 0.2]]}],
      "constraints": {"pop": "H5"},
      "runtime": 100.0,
      "weight_max": 1.0
    }

``spike_times`` is either one list per source neuron or a single flat list
shared by all of them.  A projection may give ``"all_to_all": w`` instead
of an explicit connection list.  ``record.v`` lists the neuron indices
whose membrane is read out (at most one per chip is honored).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from .. import calib
from .. import coord as C


class NetworkError(ValueError):
    """The description is malformed or inconsistent."""


class BioNeuron(NamedTuple):
    """One model neuron (or spike source neuron) of a population."""

    population: str
    index: int

    def __str__(self):
        return f"{self.population}[{self.index}]"


class Connection(NamedTuple):
    """The ``index``-th connection of a projection."""

    projection: str
    index: int
    pre: int
    post: int
    weight: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.projection, self.index)


@dataclass
class Population:
    id: str
    size: int
    params: dict = field(default_factory=dict)
    record_spikes: bool = False
    record_v: tuple[int, ...] = ()

    def neurons(self) -> list[BioNeuron]:
        return [BioNeuron(self.id, i) for i in range(self.size)]


@dataclass
class SpikeSource:
    id: str
    size: int
    spike_times: list[list[float]]

    def neurons(self) -> list[BioNeuron]:
        return [BioNeuron(self.id, i) for i in range(self.size)]

    @property
    def event_count(self) -> int:
        return sum(len(t) for t in self.spike_times)


@dataclass
class Projection:
    id: str
    source: str
    target: str
    connections: list[Connection]


@dataclass
class NetworkDescription:
    populations: dict[str, Population] = field(default_factory=dict)
    sources: dict[str, SpikeSource] = field(default_factory=dict)
    projections: list[Projection] = field(default_factory=list)
    constraints: dict[str, tuple[C.HICANNOnWafer, ...]] = field(default_factory=dict)
    runtime: float = 1000.0
    weight_max: float = 1.0

    def size_of(self, name: str) -> int:
        if name in self.populations:
            return self.populations[name].size
        if name in self.sources:
            return self.sources[name].size
        raise NetworkError(f"unknown population or source {name!r}")

    def connections(self) -> list[Connection]:
        return [c for p in self.projections for c in p.connections]

    def projection(self, pid: str) -> Projection:
        for p in self.projections:
            if p.id == pid:
                return p
        raise KeyError(pid)

    # ------------------------------------------------------------ JSON

    @classmethod
    def from_dict(cls, raw: dict) -> "NetworkDescription":
        if not isinstance(raw, dict):
            raise NetworkError("a network description is a JSON object")
        net = cls(runtime=float(raw.get("runtime", 1000.0)), weight_max=float(raw.get("weight_max", 1.0)))
        if net.runtime <= 0:
            raise NetworkError("runtime must be positive")
        if net.weight_max <= 0:
            raise NetworkError("weight_max must be positive")
        for p in raw.get("populations", []):
            pid, size = _ident(p), _size(p)
            if pid in net.populations or pid in net.sources:
                raise NetworkError(f"duplicate id {pid!r}")
            params = dict(p.get("params", {}))
            unknown = set(params) - set(calib.BIO_DEFAULTS)
            if unknown:
                raise NetworkError(f"population {pid!r}: unknown parameters {sorted(unknown)}")
            rec = p.get("record", {})
            v = rec.get("v", [])
            v = list(range(size)) if v is True else ([] if v is False else [int(i) for i in v])
            if any(not 0 <= i < size for i in v):
                raise NetworkError(f"population {pid!r}: record.v index out of range")
            net.populations[pid] = Population(pid, size, params, bool(rec.get("spikes", False)), tuple(v))
        for s in raw.get("sources", []):
            sid, size = _ident(s), _size(s)
            if sid in net.populations or sid in net.sources:
                raise NetworkError(f"duplicate id {sid!r}")
            times = s.get("spike_times", [])
            if times and not isinstance(times[0], list):
                times = [list(times) for _ in range(size)]
            if len(times) != size:
                raise NetworkError(f"source {sid!r}: need one spike-time list per neuron")
            clean = []
            for t in times:
                t = sorted(float(x) for x in t)
                if t and (t[0] < 0 or t[-1] > net.runtime):
                    raise NetworkError(f"source {sid!r}: spike times must lie in [0, runtime]")
                clean.append(t)
            net.sources[sid] = SpikeSource(sid, size, clean)
        for k, p in enumerate(raw.get("projections", [])):
            net.projections.append(_projection(net, k, p))
        ids = [p.id for p in net.projections]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate projection id")
        for pid, where in raw.get("constraints", {}).items():
            if pid not in net.populations:
                raise NetworkError(f"constraint for unknown population {pid!r}")
            net.constraints[pid] = _chips(where)
        return net

    def to_dict(self) -> dict:
        out = {
            "populations": [{"id": p.id, "size": p.size, "params": dict(p.params),
                             "record": {"spikes": p.record_spikes, "v": list(p.record_v)}}
                            for p in self.populations.values()],
            "sources": [{"id": s.id, "size": s.size, "spike_times": [list(t) for t in s.spike_times]}
                        for s in self.sources.values()],
            "projections": [{"id": p.id, "source": p.source, "target": p.target,
                             "connections": [[c.pre, c.post, c.weight] for c in p.connections]}
                            for p in self.projections],
            "constraints": {k: [C.format_short(h) for h in v] for k, v in self.constraints.items()},
            "runtime": self.runtime,
            "weight_max": self.weight_max,
        }
        return out


def _ident(entry) -> str:
    ident = entry.get("id")
    if not isinstance(ident, str) or not ident:
        raise NetworkError("every population and source needs a string id")
    return ident


def _size(entry) -> int:
    size = entry.get("size")
    if not isinstance(size, int) or isinstance(size, bool) or size < 1:
        raise NetworkError(f"{entry.get('id')!r}: size must be an integer >= 1")
    return size


def _chips(where) -> tuple[C.HICANNOnWafer, ...]:
    items = where if isinstance(where, list) else [where]
    if not items:
        raise NetworkError("a placement constraint needs at least one chip")
    chips = []
    for item in items:
        if isinstance(item, C.HICANNOnWafer):
            chips.append(item)
            continue
        try:
            h = C.parse_short(item) if isinstance(item, str) else C.HICANNOnWafer.from_enum(int(item))
        except (C.CoordinateError, ValueError) as err:
            raise NetworkError(f"bad chip in constraint: {err}") from err
        if isinstance(h, C.HICANNGlobal):
            h = h.inner
        if type(h) is not C.HICANNOnWafer:
            raise NetworkError(f"constraint {item!r} is not a chip")
        chips.append(h)
    return tuple(chips)


def _projection(net: NetworkDescription, k: int, raw: dict) -> Projection:
    src, tgt = raw.get("source"), raw.get("target")
    if src not in net.populations and src not in net.sources:
        raise NetworkError(f"projection {k}: unknown source {src!r}")
    if tgt not in net.populations:
        raise NetworkError(f"projection {k}: target {tgt!r} is not a neuron population")
    if raw.get("delay") is not None or raw.get("delays") is not None:
        raise NetworkError(f"projection {k}: the hardware has no programmable delays; remove 'delay'")
    pid = raw.get("id") or f"{src}->{tgt}#{k}"
    n_pre, n_post = net.size_of(src), net.size_of(tgt)
    if "all_to_all" in raw:
        w = float(raw["all_to_all"])
        triples = [(i, j, w) for i in range(n_pre) for j in range(n_post)]
    else:
        triples = raw.get("connections", [])
    conns = []
    for idx, t in enumerate(triples):
        if len(t) == 4:
            raise NetworkError(f"projection {pid!r}: the hardware has no programmable delays")
        if len(t) != 3:
            raise NetworkError(f"projection {pid!r}: connections are [pre, post, weight]")
        i, j, w = int(t[0]), int(t[1]), float(t[2])
        if not (0 <= i < n_pre and 0 <= j < n_post):
            raise NetworkError(f"projection {pid!r}: connection {idx} index out of range")
        if w < 0:
            raise NetworkError(f"projection {pid!r}: only excitatory (non-negative) weights are supported")
        conns.append(Connection(pid, idx, i, j, w))
    return Projection(pid, src, tgt, conns)


def load(path) -> NetworkDescription:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise NetworkError(f"{path}: {err}") from err
    return NetworkDescription.from_dict(raw)


def minimal_example(chip: str = "H5", weight: float = 0.2, runtime: float = 100.0) -> dict:
    """One spike source driving two recorded neurons pinned to ``chip``.

    The default weight maps to the digital weight 3 at ``weight_max`` 1 nA.
    """
    return {
        "populations": [{"id": "neurons", "size": 2, "params": {},
                         "record": {"spikes": True, "v": [0]}}],
        "sources": [{"id": "stimulus", "size": 1,
                     "spike_times": [[float(t) for t in range(10, int(runtime) - 10)]]}],
        "projections": [{"id": "stim->neurons", "source": "stimulus", "target": "neurons",
                         "all_to_all": weight}],
        "constraints": {"neurons": chip},
        "runtime": runtime,
        "weight_max": 1.0,
    }
