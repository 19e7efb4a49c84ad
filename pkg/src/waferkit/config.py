"""Desired wafer state, staged configuration plans and differential apply.

A :class:`WaferConfig` holds the state the user wants on the device.  Chips
are instantiated lazily on first access.  Every edit records a dirty entry
``(entity coordinate, container kind)``; a differential plan writes only
those entries, a full plan writes every instantiated entity after a chip
reset.

Plans are split into stages that always run in the same order.  Within a
stage the per-FPGA write lists run concurrently; a barrier separates stages.
"""
from __future__ import annotations

import enum
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import coord as C
from . import hal
from .hal import Unavailable

STAGES = ("reset", "clocks", "analog", "fabric", "drivers", "synapses", "inputs", "trigger")
# static worst-case settle time after each stage, in seconds
STAGE_WAIT = {"reset": 1e-3, "clocks": 1e-3, "analog": 1e-3, "fabric": 1e-3,
              "drivers": 1e-3, "synapses": 1e-3, "inputs": 1e-3, "trigger": 1e-3}

# container kind -> stage it is written in
KIND_STAGE = {
    "clock": "clocks",
    "neuron": "analog",
    "crossbar": "fabric",
    "repeater": "fabric",
    "driver": "drivers",
    "synapses": "synapses",
    "merger": "inputs",
    "readout": "inputs",
    "trigger": "trigger",
}
# differential closure: editing the left kind also forces a rewrite of the right one
FORCED_REWRITES = {"neuron": ("trigger",)}


class Mode(enum.Enum):
    FULL = "full"
    DIFFERENTIAL = "differential"


Full, Differential = Mode.FULL, Mode.DIFFERENTIAL


class ValidationFailed(Exception):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class DumpFormatError(ValueError):
    pass


def _short(coord) -> str:
    try:
        return C.format_short(coord)
    except TypeError:
        return repr(coord)


# --------------------------------------------------------------------------
# per-chip state


class SynapseProxy:
    """Mutable view of one synapse; writes go to the chip's arrays."""

    __slots__ = ("_chip", "_row", "_col")

    def __init__(self, chip: "HICANNConfig", row: int, col: int):
        self._chip, self._row, self._col = chip, row, col

    @property
    def weight(self) -> int:
        return int(self._chip.weights[self._row, self._col])

    @weight.setter
    def weight(self, value):
        self._chip.set_synapse(self._row, self._col, weight=value)

    @property
    def decoder(self) -> int:
        return int(self._chip.decoders[self._row, self._col])

    @decoder.setter
    def decoder(self, value):
        self._chip.set_synapse(self._row, self._col, decoder=value)

    def entry(self) -> hal.SynapseEntry:
        return hal.SynapseEntry(self.weight, self.decoder)


class _Synapses:
    def __init__(self, chip):
        self._chip = chip

    def __getitem__(self, s: C.SynapseOnHICANN) -> SynapseProxy:
        if not isinstance(s, C.SynapseOnHICANN):
            raise TypeError("index synapses with a SynapseOnHICANN")
        row = s.hemisphere * C.N_ROWS_PER_HEMISPHERE + s.row
        self._chip._gate(C.SynapseOnWafer(s, self._chip.coord))
        return SynapseProxy(self._chip, row, s.column)

    def __setitem__(self, s: C.SynapseOnHICANN, entry: hal.SynapseEntry):
        p = self[s]
        self._chip.set_synapse(p._row, p._col, weight=entry.weight, decoder=entry.decoder)


class _Table:
    """Dict-like access to per-entity containers with dirty tracking."""

    def __init__(self, chip, kind: str, coord_kind, container, default):
        self._chip, self._kind, self._coord_kind = chip, kind, coord_kind
        self._container, self._default = container, default
        self.entries: dict[int, object] = {}

    def __getitem__(self, c):
        self._check(c)
        return self.entries.get(c.enum, self._default)

    def __setitem__(self, c, value):
        self._check(c)
        if not isinstance(value, self._container):
            raise TypeError(f"expected {self._container.__name__}")
        self._chip._gate(C.combine(c, self._chip.coord))
        self.entries[c.enum] = value
        self._chip._touch(self._kind, c.enum)

    def _check(self, c):
        if type(c) is not self._coord_kind:
            raise TypeError(f"index with {self._coord_kind.__name__}")

    def items(self):
        return ((self._coord_kind.from_enum(k), v) for k, v in sorted(self.entries.items()))


class HICANNConfig:
    def __init__(self, owner: "WaferConfig", coord: C.HICANNOnWafer):
        self._owner = owner
        self.coord = coord
        self.weights = np.zeros((C.N_SYNAPSE_ROWS, C.N_COLUMNS), dtype=np.uint8)
        self.decoders = np.zeros((C.N_SYNAPSE_ROWS, C.N_COLUMNS), dtype=np.uint8)
        self.synapses = _Synapses(self)
        self.drivers = _Table(self, "driver", C.SynapseDriverOnHICANN, hal.SynapseDriverConfig,
                              hal.SynapseDriverConfig())
        self.neurons = _Table(self, "neuron", C.NeuronOnHICANN, hal.NeuronAnalogConfig,
                              hal.NeuronAnalogConfig())
        self._crossbar = hal.CrossbarSwitchSet()
        self._repeater = hal.RepeaterConfig()
        self._merger = hal.MergerConfig()
        self._readout = hal.ReadoutConfig()
        self._clock = hal.ClockConfig(True, 100)

    def _gate(self, coord):
        self._owner._gate(coord)

    def _touch(self, kind, key=None):
        self._owner._dirty.add((self.coord.enum, kind, key))

    # synapses -------------------------------------------------------------

    def set_synapse(self, row: int, col: int, weight=None, decoder=None):
        if weight is not None:
            self.weights[row, col] = hal._ranged("weight", weight, 15)
        if decoder is not None:
            self.decoders[row, col] = hal._ranged("decoder", decoder, 15)
        self._touch("synapses", row)

    def set_row(self, row: C.SynapseRowOnHICANN, weights, decoders):
        self._gate(C.SynapseRowOnWafer(row, self.coord))
        w = np.asarray(weights, dtype=np.int64)
        d = np.asarray(decoders, dtype=np.int64)
        if w.min(initial=0) < 0 or w.max(initial=0) > 15 or d.min(initial=0) < 0 or d.max(initial=0) > 15:
            raise ValueError("synapse weights and decoders are 4-bit")
        self.weights[row.enum] = w
        self.decoders[row.enum] = d
        self._touch("synapses", row.enum)

    # whole-chip containers ------------------------------------------------

    def _chip_property(name, kind, container):
        attr = "_" + name

        def getter(self):
            return getattr(self, attr)

        def setter(self, value):
            if not isinstance(value, container):
                raise TypeError(f"expected {container.__name__}")
            setattr(self, attr, value)
            self._touch(kind)

        return property(getter, setter)

    crossbar = _chip_property("crossbar", "crossbar", hal.CrossbarSwitchSet)
    repeater = _chip_property("repeater", "repeater", hal.RepeaterConfig)
    merger = _chip_property("merger", "merger", hal.MergerConfig)
    readout = _chip_property("readout", "readout", hal.ReadoutConfig)
    clock = _chip_property("clock", "clock", hal.ClockConfig)
    del _chip_property

    # encoding ---------------------------------------------------------------

    def writes(self, kind: str, key=None) -> tuple[np.ndarray, np.ndarray]:
        """(addresses, words) of one container kind (all entities if ``key`` is None)."""
        chip = self.coord
        if kind == "synapses":
            rows = np.arange(C.N_SYNAPSE_ROWS) if key is None else np.asarray(sorted(key))
            return hal.encode_synapse_rows(chip.enum, rows, self.weights[rows], self.decoders[rows])
        if kind in ("driver", "neuron"):
            table = self.drivers if kind == "driver" else self.neurons
            keys = range(table._coord_kind.size) if key is None else sorted(key)
            addrs, words = [], []
            for k in keys:
                c = C.combine(table._coord_kind.from_enum(k), chip)
                value = table.entries.get(k, table._default)
                addrs += hal.address_span(table._container, c)
                words += hal.encode_words(value)
            return np.array(addrs, dtype=np.uint32), np.array(words, dtype=np.uint32)
        container = {"crossbar": self._crossbar, "repeater": self._repeater, "merger": self._merger,
                     "readout": self._readout, "clock": self._clock}[kind]
        addrs = hal.address_span(type(container), chip)
        return np.array(addrs, dtype=np.uint32), np.array(hal.encode_words(container), dtype=np.uint32)

    def used_buslines(self) -> set[C.BusLineOnHICANN]:
        lines = set()
        for h, v in self._crossbar.switches:
            lines.add(C.BusLineOnHICANN.horizontal(h))
            lines.add(C.BusLineOnHICANN.from_enum(C.N_HLINES + v))
        lines |= {C.BusLineOnHICANN.horizontal(h) for h in self._repeater.east | self._merger.input_lines}
        lines |= {C.BusLineOnHICANN.from_enum(C.N_HLINES + v) for v in self._repeater.south}
        lines |= {C.BusLineOnHICANN.horizontal(o.line) for o in self._merger.outputs}
        return lines


# --------------------------------------------------------------------------
# wafer


class WaferConfig:
    def __init__(self, wafer: int = 0, availability=None):
        self.wafer = C.Wafer(wafer)
        self.availability = availability
        self.hicanns: dict[int, HICANNConfig] = {}
        self.triggers: dict[int, hal.TriggerConfig] = {}
        self._dirty: set[tuple] = set()
        self.needs_full = True

    def _gate(self, coord):
        if self.availability is not None and not self.availability.is_usable(coord):
            raise Unavailable(coord)

    def __getitem__(self, h: C.HICANNOnWafer) -> HICANNConfig:
        return self.get_or_create(h)

    def get_or_create(self, h: C.HICANNOnWafer) -> HICANNConfig:
        if isinstance(h, C.HICANNGlobal):
            if h.outer != self.wafer:
                raise ValueError(f"{_short(h)} is not on {_short(self.wafer)}")
            h = h.inner
        if type(h) is not C.HICANNOnWafer:
            raise TypeError("index the wafer with a HICANNOnWafer")
        self._gate(h)
        chip = self.hicanns.get(h.enum)
        if chip is None:
            chip = self.hicanns[h.enum] = HICANNConfig(self, h)
            self.needs_full = True
        return chip

    def __contains__(self, h) -> bool:
        return h.enum in self.hicanns

    def chips(self) -> list[C.HICANNOnWafer]:
        return [C.HICANNOnWafer.from_enum(e) for e in sorted(self.hicanns)]

    def fpgas(self) -> list[C.FPGAOnWafer]:
        return sorted({h.to_fpga() for h in self.chips()})

    def set_trigger(self, fpga: C.FPGAOnWafer, trigger: hal.TriggerConfig):
        self._gate(fpga)
        self.triggers[fpga.enum] = trigger
        self._dirty.add((fpga.enum, "trigger", None))

    def trigger(self, fpga: C.FPGAOnWafer) -> hal.TriggerConfig:
        return self.triggers.get(fpga.enum, hal.TriggerConfig())

    @property
    def dirty(self) -> set[tuple]:
        """Dirty entries as (entity coordinate, container kind)."""
        out = set()
        for chip, kind, key in self._dirty:
            if kind == "trigger":
                out.add((C.FPGAOnWafer(chip), kind))
                continue
            h = C.HICANNOnWafer.from_enum(chip)
            if kind == "synapses":
                out.add((C.SynapseRowOnWafer(C.SynapseRowOnHICANN.from_enum(key), h), kind))
            elif kind == "driver":
                out.add((C.SynapseDriverOnWafer(C.SynapseDriverOnHICANN.from_enum(key), h), kind))
            elif kind == "neuron":
                out.add((C.NeuronOnWafer(C.NeuronOnHICANN.from_enum(key), h), kind))
            else:
                out.add((h, kind))
        return out

    def clear_dirty(self):
        self._dirty.clear()

    # validation -------------------------------------------------------------

    def validate(self) -> None:
        """Re-check availability of everything the configuration uses."""
        db = self.availability
        if db is None:
            return
        problems = []
        for chip in self.hicanns.values():
            h = chip.coord
            if not db.is_usable(h):
                problems.append(f"{_short(h)} is configured but unavailable")
                continue
            for r in np.flatnonzero(chip.weights.any(axis=1)):
                row = C.SynapseRowOnWafer(C.SynapseRowOnHICANN.from_enum(int(r)), h)
                if not db.is_usable(row):
                    problems.append(f"{_short(h)} synapse row {row.inner.enum} is used but unavailable")
            for d, cfg in chip.drivers.items():
                if cfg.enable and not db.is_usable(C.SynapseDriverOnWafer(d, h)):
                    problems.append(f"{_short(h)} driver {d.enum} is enabled but unavailable")
            for n, cfg in chip.neurons.items():
                if cfg != hal.NeuronAnalogConfig() and not db.is_usable(C.NeuronOnWafer(n, h)):
                    problems.append(f"{_short(C.NeuronOnWafer(n, h))} is configured but unavailable")
            for line in sorted(chip.used_buslines()):
                if not db.is_usable(C.BusLineOnWafer(line, h)):
                    problems.append(f"{_short(h)} bus line {line.enum} is routed but unavailable")
        if problems:
            raise ValidationFailed(problems)


# --------------------------------------------------------------------------
# plans


@dataclass
class Stage:
    name: str
    writes: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)  # FPGA enum -> batch
    wait: float = 0.0

    @property
    def count(self) -> int:
        return sum(len(a) for a, _ in self.writes.values())

    def add(self, fpga: int, addresses: np.ndarray, words: np.ndarray):
        if not len(addresses):
            return
        if fpga in self.writes:
            a, w = self.writes[fpga]
            addresses, words = np.concatenate([a, addresses]), np.concatenate([w, words])
        self.writes[fpga] = (addresses, words)


@dataclass
class ApplyPlan:
    mode: Mode
    stages: list[Stage]
    config: WaferConfig | None = None
    covered: frozenset = frozenset()

    @property
    def count(self) -> int:
        return sum(s.count for s in self.stages)

    def stage(self, name: str) -> Stage:
        return self.stages[STAGES.index(name)]

    def populated(self) -> list[str]:
        return [s.name for s in self.stages if s.count]

    def is_empty(self) -> bool:
        return self.count == 0

    def image(self) -> dict[int, int]:
        """Register image produced by this plan on a freshly reset device."""
        out = {}
        for s in self.stages:
            for fpga in sorted(s.writes):
                a, w = s.writes[fpga]
                out.update(zip(a.tolist(), w.tolist()))
        for a in [a for a in out if hal.split_address(a)[1:] == (hal.REGION["control"], hal.RESET_OFFSET)]:
            del out[a]
        return out


def build_plan(config: WaferConfig, mode: Mode = Full) -> ApplyPlan:
    config.validate()
    stages = {name: Stage(name, wait=STAGE_WAIT[name]) for name in STAGES}
    covered = frozenset(config._dirty)
    if mode is Full:
        for chip in (config.hicanns[e] for e in sorted(config.hicanns)):
            fpga = chip.coord.to_fpga().enum
            stages["reset"].add(fpga, *_batch(hal.reset_writes(chip.coord)))
            for kind in ("clock", "neuron", "crossbar", "repeater", "driver", "synapses", "merger", "readout"):
                stages[KIND_STAGE[kind]].add(fpga, *chip.writes(kind))
        for f in config.fpgas():
            stages["trigger"].add(f.enum, *_batch(hal.encode(config.trigger(f), f)))
    else:
        if config.needs_full:
            raise ValidationFailed(["differential plan requested before a successful full apply"])
        grouped: dict[tuple[int, str], set | None] = {}
        for chip, kind, key in config._dirty:
            if key is None:
                grouped[(chip, kind)] = None
            else:
                bucket = grouped.setdefault((chip, kind), set())
                if bucket is not None:
                    bucket.add(key)
        triggers = {chip for chip, kind in grouped if kind == "trigger"}
        for (chip, kind), keys in grouped.items():
            for forced in FORCED_REWRITES.get(kind, ()):
                if forced == "trigger":
                    triggers.add(C.HICANNOnWafer.from_enum(chip).to_fpga().enum)
        for (chip_enum, kind), keys in sorted(grouped.items(), key=lambda kv: (kv[0][0], STAGES.index(KIND_STAGE[kv[0][1]]))):
            if kind == "trigger":
                continue
            chip = config.hicanns[chip_enum]
            stages[KIND_STAGE[kind]].add(chip.coord.to_fpga().enum, *chip.writes(kind, keys))
        for f in sorted(triggers):
            fpga = C.FPGAOnWafer(f)
            stages["trigger"].add(f, *_batch(hal.encode(config.trigger(fpga), fpga)))
    return ApplyPlan(mode, [stages[n] for n in STAGES], config, covered)


def _batch(writes) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([w.address for w in writes], dtype=np.uint32),
            np.array([w.word for w in writes], dtype=np.uint32))


@dataclass
class ApplyReport:
    mode: Mode
    stage_writes: dict[str, int]
    waited: float
    log: list[tuple[str, int]]  # (stage, fpga) in completion order

    @property
    def writes(self) -> int:
        return sum(self.stage_writes.values())

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "writes": self.writes, "stage_writes": self.stage_writes,
                "waited_s": self.waited}


def apply(plan: ApplyPlan, handles, max_workers: int | None = None) -> ApplyReport:
    """Execute ``plan``; ``handles`` maps FPGA enum (or FPGAOnWafer) to a handle, or is one handle.

    Stages run in order with a barrier in between; FPGAs within a stage run
    concurrently.  On a transport error the dirty set is kept and the next
    plan must be a full one.
    """
    if isinstance(handles, hal.Handle):
        lookup = lambda f: handles
    else:
        table = {getattr(k, "enum", k): v for k, v in handles.items()}

        def lookup(f):
            if f not in table:
                raise KeyError(f"no handle for {_short(C.FPGAOnWafer(f))}")
            return table[f]

    needed = {f for s in plan.stages for f in s.writes}
    for f in needed:
        lookup(f)
    log, stage_writes, waited = [], {}, 0.0
    workers = max_workers or max(1, min(16, len(needed)))

    def run(stage, fpga):
        a, w = stage.writes[fpga]
        lookup(fpga).write_batch(a, w)
        return stage.name, fpga

    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for stage in plan.stages:
                futures = [pool.submit(run, stage, f) for f in sorted(stage.writes)]
                # barrier: every FPGA finishes this stage before the next starts
                for fut in futures:
                    log.append(fut.result())
                stage_writes[stage.name] = stage.count
                if stage.count:
                    waited += stage.wait
    except Exception:
        if plan.config is not None:
            plan.config.needs_full = True
        raise
    if plan.config is not None:
        plan.config._dirty -= plan.covered
        if plan.mode is Full:
            plan.config.needs_full = False
    return ApplyReport(plan.mode, stage_writes, waited, log)


def read_back(config: WaferConfig, handle) -> WaferConfig:
    """Rebuild a WaferConfig for the chips of ``config`` from device registers."""
    out = WaferConfig(config.wafer.value)
    for h in config.chips():
        _load_chip(out, h, lambda addrs: handle.read_batch(addrs))
    for f in config.fpgas():
        words = handle.read_batch(hal.address_span(hal.TriggerConfig, f)).tolist()
        out.triggers[f.enum] = hal.decode(hal.TriggerConfig, f, words)
    out.clear_dirty()
    return out


def _load_chip(out: WaferConfig, h: C.HICANNOnWafer, read):
    chip = out.get_or_create(h)
    rows = np.arange(C.N_SYNAPSE_ROWS)
    words = np.asarray(read(hal.synapse_row_addresses(h.enum, rows).ravel()))
    w, d = hal.decode_synapse_rows(words.reshape(C.N_SYNAPSE_ROWS, C.N_COLUMNS))
    chip.weights[:], chip.decoders[:] = w, d
    for table in (chip.drivers, chip.neurons):
        kind = table._container
        addrs = []
        coords = [C.combine(c, h) for c in table._coord_kind.iter_all()]
        for c in coords:
            addrs += hal.address_span(kind, c)
        words = np.asarray(read(np.array(addrs, dtype=np.uint32))).tolist()
        span = len(addrs) // len(coords)
        for i, c in enumerate(coords):
            value = hal.decode(kind, c, words[i * span:(i + 1) * span])
            if value != table._default:
                table.entries[c.inner.enum] = value
    for name, kind in (("crossbar", hal.CrossbarSwitchSet), ("repeater", hal.RepeaterConfig),
                       ("merger", hal.MergerConfig), ("readout", hal.ReadoutConfig), ("clock", hal.ClockConfig)):
        words = np.asarray(read(np.array(hal.address_span(kind, h), dtype=np.uint32))).tolist()
        setattr(chip, "_" + name, hal.decode(kind, h, words))


def equal_state(a: WaferConfig, b: WaferConfig) -> bool:
    if sorted(a.hicanns) != sorted(b.hicanns):
        return False
    for e, ca in a.hicanns.items():
        cb = b.hicanns[e]
        if not (np.array_equal(ca.weights, cb.weights) and np.array_equal(ca.decoders, cb.decoders)):
            return False
        for t in ("drivers", "neurons"):
            ta, tb = getattr(ca, t), getattr(cb, t)
            da = {k: v for k, v in ta.entries.items() if v != ta._default}
            db = {k: v for k, v in tb.entries.items() if v != tb._default}
            if da != db:
                return False
        for name in ("_crossbar", "_repeater", "_merger", "_readout", "_clock"):
            if getattr(ca, name) != getattr(cb, name):
                return False
    fa = {f.enum for f in a.fpgas()}
    return all(a.trigger(C.FPGAOnWafer(f)) == b.trigger(C.FPGAOnWafer(f)) for f in fa)


# --------------------------------------------------------------------------
# dump

DUMP_MAGIC = b"WKCF"
DUMP_VERSION = 1


def dump(config: WaferConfig) -> bytes:
    """Versioned binary dump: header, then the sorted register image of a full plan."""
    plan = build_plan(config, Full) if config.availability is None else _unchecked_full(config)
    image = plan.image()
    header = json.dumps({"wafer": config.wafer.value, "chips": sorted(config.hicanns),
                         "fpgas": [f.enum for f in config.fpgas()]}, sort_keys=True).encode()
    return DUMP_MAGIC + struct.pack(">HI", DUMP_VERSION, len(header)) + header + hal.image_bytes(image)


def _unchecked_full(config):
    saved, config.availability = config.availability, None
    try:
        return build_plan(config, Full)
    finally:
        config.availability = saved


def load_dump(data: bytes, availability=None) -> WaferConfig:
    if data[:4] != DUMP_MAGIC:
        raise DumpFormatError("not a waferkit configuration dump")
    version, n = struct.unpack(">HI", data[4:10])
    if version != DUMP_VERSION:
        raise DumpFormatError(f"dump version {version}, expected {DUMP_VERSION}")
    header = json.loads(data[10:10 + n])
    body = np.frombuffer(data[10 + n:], dtype=">u4").reshape(-1, 2)
    image = dict(zip(body[:, 0].tolist(), body[:, 1].tolist()))

    def read(addrs):
        return np.array([image.get(a, 0) for a in np.asarray(addrs).tolist()], dtype=np.uint32)

    out = WaferConfig(header["wafer"], availability)
    for e in header["chips"]:
        _load_chip(out, C.HICANNOnWafer.from_enum(e), read)
    for f in header["fpgas"]:
        fpga = C.FPGAOnWafer(f)
        out.triggers[f] = hal.decode(hal.TriggerConfig, fpga, read(hal.address_span(hal.TriggerConfig, fpga)).tolist())
    out.clear_dirty()
    return out
