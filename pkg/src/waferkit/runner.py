"""Batch experiments: compile a network to a wafer configuration, run it, translate results back.

The flow of one experiment:

1. :func:`compile` parses the network, maps it with :mod:`waferkit.maproute`
   and fills a :class:`~waferkit.config.WaferConfig` (analog parameters
   through the calibration database, synapses, drivers, fabric, mergers).
2. :func:`execute` applies the configuration, uploads the translated
   stimulus, arms the triggers, runs and reads out, and converts spike
   times and membrane traces to biological units.

Compilation is offline; only :func:`execute` talks to a device.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calib, hal
from . import config as cfg
from . import coord as C
from .availability import AvailabilityDb, load_or_empty
from .maproute import (BioNeuron, MappingResult, NetworkDescription, compile_network)
from .maproute.routing import DEFAULT_MAX_SWITCHES
from .maproute.placement import DEFAULT_NEURON_SIZE, chip_name
from .simdevice.device import playback_address

ENDPOINT_ENV = "WAFERKIT_ENDPOINT"
PARKED = 15  # row input_select no 6-bit address can match
DEFAULT_SAMPLE_INTERVAL = 10


class ExperimentError(ValueError):
    pass


@dataclass
class Experiment:
    """What to run: a network plus the databases and options that shape its mapping.

    ``network`` is a path, a JSON-like dict or a NetworkDescription.  The
    databases may be given as paths (missing files mean empty databases) or
    as objects.  ``runtime`` is in biological seconds and overrides the
    network's own runtime.
    """

    network: object
    availability: object = None
    calibration: object = None
    runtime: float | None = None
    neuron_size: int = DEFAULT_NEURON_SIZE
    max_switches: int = DEFAULT_MAX_SWITCHES
    endpoint: str | None = None
    wafer: int = 0
    units: calib.UnitTranslation = field(default_factory=calib.UnitTranslation)

    def __post_init__(self):
        if self.runtime is not None and not self.runtime > 0:
            raise ExperimentError("runtime must be positive")

    def description(self) -> NetworkDescription:
        net = self.network
        if isinstance(net, NetworkDescription):
            net = NetworkDescription.from_dict(net.to_dict())
        elif isinstance(net, dict):
            net = NetworkDescription.from_dict(net)
        else:
            net = NetworkDescription.from_dict(json.loads(Path(net).read_text()))
        if self.runtime is not None:
            runtime_ms = self.runtime * 1e3
            late = [s.id for s in net.sources.values() if any(t and t[-1] > runtime_ms for t in s.spike_times)]
            if late:
                raise ExperimentError(f"source {late[0]!r} has spikes after the runtime of {self.runtime} s")
            net.runtime = runtime_ms
        return net

    def availability_db(self) -> AvailabilityDb:
        db = self.availability
        if isinstance(db, AvailabilityDb):
            if db.wafer != self.wafer:
                raise ExperimentError(f"availability db is for W{db.wafer}, experiment runs on W{self.wafer}")
            return db
        return load_or_empty(db, self.wafer) if db is not None else AvailabilityDb(self.wafer)

    def calibration_db(self) -> calib.CalibrationDb:
        db = self.calibration
        if isinstance(db, calib.CalibrationDb):
            return db
        return calib.load_db(db)

    @property
    def runtime_s(self) -> float:
        return self.runtime if self.runtime is not None else self.description().runtime / 1e3

    @classmethod
    def from_file(cls, path, **overrides) -> "Experiment":
        """An experiment file is a network description, or ``{"network": ..., options...}``."""
        raw = json.loads(Path(path).read_text())
        if isinstance(raw, dict) and "network" in raw:
            opts = {k: raw[k] for k in ("availability", "calibration", "runtime", "neuron_size",
                                        "max_switches", "endpoint", "wafer") if k in raw}
            net = raw["network"]
            if isinstance(net, str):
                net = str(Path(path).parent / net)
        else:
            opts, net = {}, raw
        opts.update({k: v for k, v in overrides.items() if v is not None})
        return cls(net, **opts)


# --------------------------------------------------------------------------
# compile


def compile(experiment: Experiment) -> tuple[MappingResult, cfg.WaferConfig]:
    """Map the experiment's network and build the wafer configuration.  Deterministic."""
    net = experiment.description()
    db = experiment.availability_db()
    mapping = compile_network(net, db, experiment.neuron_size, experiment.max_switches, wafer=experiment.wafer)
    config = build_config(net, mapping, experiment.calibration_db(), experiment.units, db)
    return mapping, config


def _analog(net: NetworkDescription, mapping: MappingResult, config: cfg.WaferConfig,
            cdb: calib.CalibrationDb, units: calib.UnitTranslation) -> None:
    values = {pid: calib.bio_to_hw(p.params, units, net.weight_max) for pid, p in net.populations.items()}
    for bio, ln in sorted(mapping.placement.items()):
        primary = ln.primary
        hw = values[bio.population]
        try:
            codes = {name: cdb.code(primary, name, hw[name]) for name in hal.NEURON_PARAMETERS}
        except calib.CalibError as err:
            raise type(err)(f"{chip_name(ln.chip, mapping.wafer)} neuron {primary.inner.enum}: {err}") from err
        config[ln.chip].neurons[primary.inner] = hal.NeuronAnalogConfig(**codes)


def _fabric(mapping: MappingResult, config: cfg.WaferConfig) -> None:
    switches: dict[int, set] = {}
    east: dict[int, set] = {}
    south: dict[int, set] = {}
    for r in mapping.routes:
        for a, b in zip(r.path, r.path[1:]):
            if a.outer == b.outer:
                h, v = (a.inner.enum, b.inner.enum) if a.inner.enum < C.N_HLINES else (b.inner.enum, a.inner.enum)
                switches.setdefault(a.outer.enum, set()).add((h, v - C.N_HLINES))
                continue
            # a continuation is stored on the west or north chip of the pair
            first, second = sorted((a.outer, b.outer), key=lambda h: (h.y, h.x))
            idx = a.inner.enum
            if idx < C.N_HLINES:
                east.setdefault(first.enum, set()).add(idx)
            else:
                south.setdefault(first.enum, set()).add(idx - C.N_HLINES)
    for e in sorted(set(switches) | set(east) | set(south)):
        chip = config[C.HICANNOnWafer.from_enum(e)]
        if e in switches:
            chip.crossbar = hal.CrossbarSwitchSet(frozenset(switches[e]))
        if e in east or e in south:
            chip.repeater = hal.RepeaterConfig(frozenset(east.get(e, ())), frozenset(south.get(e, ())))


def _synapses(mapping: MappingResult, config: cfg.WaferConfig) -> None:
    for d in mapping.drivers:
        rows = tuple(hal.RowConfig(PARKED, 0) if s is None else hal.RowConfig(s, 0) for s in d.input_selects)
        config[d.driver.outer].drivers[d.driver.inner] = hal.SynapseDriverConfig(True, d.line_select, rows)
    for key in sorted(mapping.synapses):
        s = mapping.synapses[key]
        syn = s.synapse.inner
        row = syn.hemisphere * C.N_ROWS_PER_HEMISPHERE + syn.row
        config[s.synapse.outer].set_synapse(row, syn.column, s.weight, s.decoder)


def _inputs(net: NetworkDescription, mapping: MappingResult, config: cfg.WaferConfig) -> None:
    inputs: dict[int, set] = {}
    outputs: dict[int, list] = {}
    for ep in mapping.injections.values():
        inputs.setdefault(ep.chip.enum, set()).add(ep.line)
    for bio, ep in sorted(mapping.outputs.items()):
        ln = mapping.placement[bio]
        record = net.populations[bio.population].record_spikes
        outputs.setdefault(ep.chip.enum, []).append(
            hal.NeuronOutput(ln.primary.inner.enum, ep.line, ep.address, record))
    for e in sorted(set(inputs) | set(outputs)):
        config[C.HICANNOnWafer.from_enum(e)].merger = hal.MergerConfig(
            frozenset(inputs.get(e, ())), tuple(outputs.get(e, ())))
    # one analog readout channel per chip: the first recorded neuron wins
    readout: dict[int, int] = {}
    for pid, pop in net.populations.items():
        for i in pop.record_v:
            ln = mapping.placement.get(BioNeuron(pid, i))
            if ln is not None and ln.chip.enum not in readout:
                readout[ln.chip.enum] = ln.primary.inner.enum
    for e, n in sorted(readout.items()):
        config[C.HICANNOnWafer.from_enum(e)].readout = hal.ReadoutConfig(True, n)


def build_config(net: NetworkDescription, mapping: MappingResult, cdb: calib.CalibrationDb | None = None,
                 units: calib.UnitTranslation | None = None, availability=None) -> cfg.WaferConfig:
    """WaferConfig realizing ``mapping``; analog values pass through the calibration database."""
    cdb = cdb if cdb is not None else calib.CalibrationDb()
    units = units or calib.UnitTranslation()
    config = cfg.WaferConfig(mapping.wafer, availability)
    for h in mapping.chips():
        config[h]
    _analog(net, mapping, config, cdb, units)
    _fabric(mapping, config)
    _synapses(mapping, config)
    _inputs(net, mapping, config)
    for f in config.fpgas():
        config.set_trigger(f, hal.TriggerConfig(True))
    return config


# --------------------------------------------------------------------------
# stimulus


@dataclass
class Stimulus:
    """Spike-source events per FPGA: biological times (ms) and playback addresses."""

    events: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def ticks(self, units: calib.UnitTranslation, dt: float) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Hardware playback buffers: times in device ticks."""
        out = {}
        for fpga, (t_ms, addrs) in sorted(self.events.items()):
            t_hw = t_ms * 1e-3 * units.time_factor
            out[fpga] = (np.rint(t_hw / dt).astype(np.int64), addrs)
        return out

    def __len__(self):
        return sum(len(t) for t, _ in self.events.values())


def stimulus(net: NetworkDescription, mapping: MappingResult) -> Stimulus:
    per: dict[int, list] = {}
    for bio, ep in sorted(mapping.injections.items()):
        src = net.sources[bio.population]
        addr = playback_address(ep.chip.index_in_reticle, ep.line, ep.address)
        per.setdefault(ep.chip.to_fpga().enum, []).extend((t, addr) for t in src.spike_times[bio.index])
    events = {}
    for fpga, items in sorted(per.items()):
        items.sort()
        events[fpga] = (np.array([t for t, _ in items], dtype=float), np.array([a for _, a in items], dtype=np.int64))
    return Stimulus(events)


def run_ticks(runtime_s: float, units: calib.UnitTranslation, dt: float) -> int:
    """Device run duration in ticks for a biological runtime."""
    return max(1, int(math.ceil(units.time(runtime_s) / dt - 1e-9)))


# --------------------------------------------------------------------------
# execute


@dataclass
class RunResult:
    runtime: float  # biological seconds
    spikes: dict[str, dict[int, list[float]]]  # population -> neuron -> spike times (ms)
    traces: list[dict]  # {"population", "neuron", "time_ms", "v_mV"}
    losses: dict
    apply: dict
    counters: dict
    raw: dict | None = None

    def spike_count(self, population: str | None = None) -> int:
        pops = [population] if population else list(self.spikes)
        return sum(len(t) for p in pops for t in self.spikes.get(p, {}).values())

    def summary(self) -> dict:
        return {"runtime_s": self.runtime, "losses": self.losses, "apply": self.apply, "counters": self.counters,
                "spike_counts": {p: {str(i): len(t) for i, t in sorted(n.items())} for p, n in self.spikes.items()},
                "traces": [{"population": t["population"], "neuron": t["neuron"], "samples": len(t["v_mV"])}
                           for t in self.traces]}


def _split(plan: cfg.ApplyPlan) -> tuple[cfg.ApplyPlan, cfg.ApplyPlan]:
    """The plan without its trigger stage, and the trigger stage alone."""
    last = len(cfg.STAGES) - 1
    body = [s if i != last else cfg.Stage(s.name, {}, s.wait) for i, s in enumerate(plan.stages)]
    trig = [s if i == last else cfg.Stage(s.name, {}, s.wait) for i, s in enumerate(plan.stages)]
    t_cov = frozenset(d for d in plan.covered if d[1] == "trigger")
    return (cfg.ApplyPlan(plan.mode, body, plan.config, plan.covered - t_cov),
            cfg.ApplyPlan(plan.mode, trig, plan.config, t_cov))


def _records(net: NetworkDescription) -> bool:
    return any(p.record_spikes or p.record_v for p in net.populations.values())


def execute(config: cfg.WaferConfig, stim: Stimulus, runtime: float, mode: cfg.Mode = cfg.Full,
            handle: hal.Handle | None = None, mapping: MappingResult | None = None,
            units: calib.UnitTranslation | None = None, seed: int = 0, net: NetworkDescription | None = None,
            sample_interval: int = DEFAULT_SAMPLE_INTERVAL, jitter: int = 0) -> RunResult:
    """Apply, upload the stimulus, arm, run ``runtime`` biological seconds and read out.

    ``mapping`` is needed to attribute spikes and traces to populations;
    without it results are keyed by short-format circuit names.
    """
    if handle is None:
        raise ExperimentError("execute needs a device handle")
    if not runtime > 0:
        raise ExperimentError("runtime must be positive")
    units = units or calib.UnitTranslation()
    dt = float(handle.control("status")["dt"])
    duration = run_ticks(runtime, units, dt)

    body, trigger = _split(cfg.build_plan(config, mode))
    first = cfg.apply(body, handle)
    handle.control("clear_playback")
    for fpga, (ticks, addrs) in stim.ticks(units, dt).items():
        handle.upload_playback(fpga, ticks.tolist(), addrs.tolist())
    second = cfg.apply(trigger, handle)
    report = first.to_dict()
    report["writes"] += second.writes
    report["stage_writes"]["trigger"] = second.stage_writes.get("trigger", 0)
    report["waited_s"] += second.waited

    counters = handle.control("run", duration=duration, seed=seed, sample_interval=sample_interval,
                              jitter=jitter)["counters"]
    recording = _records(net) if net is not None else True
    raw = handle.control("readout") if recording else None
    spikes, traces = translate_results(raw, mapping, units, runtime)
    losses = mapping.loss_report() if mapping is not None else {}
    return RunResult(runtime, spikes, traces, losses, report, counters, raw)


def _who(mapping: MappingResult | None, chip: int, neuron: int) -> tuple[str, int]:
    circuit = C.NeuronOnWafer(C.NeuronOnHICANN.from_enum(neuron), C.HICANNOnWafer.from_enum(chip))
    if mapping is not None and circuit in mapping.circuits:
        bio = mapping.circuits[circuit]
        return bio.population, bio.index
    return C.format_short(circuit.outer), neuron


def translate_results(raw: dict | None, mapping: MappingResult | None, units: calib.UnitTranslation,
                      runtime: float) -> tuple[dict, list]:
    """Device readout to biological spike times (ms) and membrane traces (ms, mV)."""
    spikes: dict[str, dict[int, list[float]]] = {}
    if mapping is not None:
        for bio in sorted(mapping.outputs):
            spikes.setdefault(bio.population, {}).setdefault(bio.index, [])
    traces: list[dict] = []
    if raw is None:
        return spikes, traces
    dt = float(raw["dt"])
    limit = runtime * 1e3
    for tick, chip, neuron, _addr in raw["spikes"]:
        t = units.time_back(tick * dt) * 1e3
        if t > limit:
            continue
        pop, idx = _who(mapping, chip, neuron)
        spikes.setdefault(pop, {}).setdefault(idx, []).append(t)
    step = int(raw["sample_interval"])
    for tr in raw["traces"]:
        pop, idx = _who(mapping, tr["chip"], tr["neuron"])
        ticks = np.arange(len(tr["v"])) * step
        t_ms = ticks * dt / units.time_factor * 1e3
        v_mv = units.voltage_back(np.asarray(tr["v"], dtype=float)) * 1e3
        keep = t_ms <= limit
        traces.append({"population": pop, "neuron": idx, "time_ms": t_ms[keep].tolist(),
                       "v_mV": v_mv[keep].tolist()})
    return spikes, traces


def run(experiment: Experiment, handle: hal.Handle, seed: int = 0) -> tuple[MappingResult, cfg.WaferConfig, RunResult]:
    """compile + execute in Full mode."""
    mapping, config = compile(experiment)
    net = experiment.description()
    result = execute(config, stimulus(net, mapping), experiment.runtime_s, cfg.Full, handle, mapping,
                     experiment.units, seed, net)
    return mapping, config, result


# --------------------------------------------------------------------------
# result files


def write_results(result: RunResult, out_dir) -> list[Path]:
    """spikes.csv (population, neuron, time_ms), traces.csv (population, neuron, time_ms, v_mV), summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "spikes.csv", out / "traces.csv", out / "summary.json"]
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["population", "neuron", "time_ms"])
        for pop in sorted(result.spikes):
            for idx in sorted(result.spikes[pop]):
                for t in result.spikes[pop][idx]:
                    w.writerow([pop, idx, f"{t:.6f}"])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["population", "neuron", "time_ms", "v_mV"])
        for tr in result.traces:
            for t, v in zip(tr["time_ms"], tr["v_mV"]):
                w.writerow([tr["population"], tr["neuron"], f"{t:.6f}", f"{v:.6f}"])
    paths[2].write_text(json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    return paths


# --------------------------------------------------------------------------
# device access


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ExperimentError(f"endpoint {endpoint!r} is not host:port")
    return host or "127.0.0.1", int(port)


def connect(endpoint: str | None = None, availability=None, timeout: float = 10.0) -> hal.RemoteHandle:
    """Handle to a device served at ``endpoint`` (default: the WAFERKIT_ENDPOINT variable)."""
    from .transport.client import DeviceClient

    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise ExperimentError(f"no device endpoint given and {ENDPOINT_ENV} is not set")
    host, port = parse_endpoint(endpoint)
    try:
        client = DeviceClient.connect(host, port, timeout=timeout)
    except Exception as err:
        raise hal.TransportError(f"cannot reach device at {endpoint}: {err}") from err
    return hal.RemoteHandle(client, availability)


__all__ = ["Experiment", "ExperimentError", "RunResult", "Stimulus", "compile", "build_config", "stimulus",
           "run_ticks", "execute", "translate_results", "run", "write_results", "connect", "parse_endpoint",
           "ENDPOINT_ENV", "PARKED"]
