"""Behavioral simulated wafer: registers in, spikes and membrane traces out.

The device keeps the raw register map.  A run decodes it, integrates every
configured neuron circuit (any non-zero analog code) on clocked chips, and
routes events through the configured fabric.  Hardware time is counted in
ticks of the integration step ``dt``.

Playback events are addressed ``chip_in_reticle:3 | line:6 | address:6``
(bit 15 zero): the FPGA feeds the event into horizontal ``line`` of the
given chip of its reticle, which must be enabled as an input line.
"""
from __future__ import annotations

import logging
import threading

import numpy as np

from .. import calib
from .. import coord as C
from .. import hal
from .fabric import Fabric
from .neuron import AdExParameters, AdExPopulation
from .registers import AddressError, RegisterFile

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-8  # 10 ns: one hundredth of the default 1 us membrane time constant
PLAYBACK_BYTES = int(1.25 * (1 << 30))
PLAYBACK_ENTRY_BYTES = 12
PLAYBACK_BUDGET = PLAYBACK_BYTES // PLAYBACK_ENTRY_BYTES
_HW_MAX = np.array([calib.PARAMETERS[n].hw_max for n in hal.NEURON_PARAMETERS])
_NPARAM = len(hal.NEURON_PARAMETERS)

# logical synapse row -> physical row of the memory array
_ROW_PERM = np.array([h * C.N_ROWS_PER_HEMISPHERE + hal.physical_row(h, r)
                      for h in range(C.N_HEMISPHERES) for r in range(C.N_ROWS_PER_HEMISPHERE)])


class DeviceError(Exception):
    pass


class ProtocolError(DeviceError):
    """A command arrived in a state that does not allow it."""


class NothingRecorded(DeviceError):
    pass


def playback_address(chip_in_reticle: int, line: int, address: int) -> int:
    if not (0 <= chip_in_reticle < C.HICANNS_PER_FPGA and 0 <= line < C.N_HLINES and 0 <= address < 64):
        raise ValueError("playback address fields out of range")
    return (chip_in_reticle << 12) | (line << 6) | address


def split_playback_address(a: int) -> tuple[int, int, int]:
    return a >> 12, (a >> 6) & 63, a & 63


class SimulatedWafer:
    def __init__(self, wafer: int = 0, dt: float = DEFAULT_DT, mismatch: float = 0.0, seed: int = 0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if mismatch < 0:
            raise ValueError("mismatch must be non-negative")
        self.wafer = wafer
        self.dt = dt
        self.mismatch = mismatch
        self.seed = seed
        self.regs = RegisterFile()
        self.playback: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.result = None
        self.lock = threading.RLock()  # one command at a time; at most one active run
        self._gains: dict[int, np.ndarray] = {}
        self._fabric: Fabric | None = None

    # --------------------------------------------------------------- registers

    def write_batch(self, addresses, words) -> None:
        with self.lock:
            try:
                self.regs.write(addresses, words)
            except AddressError as err:
                raise DeviceError(str(err)) from err

    def read_batch(self, addresses) -> np.ndarray:
        with self.lock:
            try:
                return self.regs.read(addresses)
            except AddressError as err:
                raise DeviceError(str(err)) from err

    def image(self) -> dict[int, int]:
        with self.lock:
            return self.regs.image()

    def set_fault(self, address: int, value: int) -> None:
        with self.lock:
            self.regs.set_fault(address, value)

    def clear_faults(self) -> None:
        with self.lock:
            self.regs.clear_faults()

    def fabric(self) -> Fabric:
        if self._fabric is None or self._fabric.version != self.regs.version:
            self._fabric = Fabric(self.regs)
        return self._fabric

    # ----------------------------------------------------------- decoded views

    def _gain(self, chip: int) -> np.ndarray:
        g = self._gains.get(chip)
        if g is None:
            if self.mismatch:
                rng = np.random.default_rng([self.seed, chip])
                g = np.clip(1.0 + self.mismatch * rng.standard_normal((C.N_NEURONS, _NPARAM)), 0.0, None)
            else:
                g = np.ones((C.N_NEURONS, _NPARAM))
            self._gains[chip] = g
        return g

    def neuron_codes(self, chip: int) -> np.ndarray:
        arr = self.regs.block(chip, hal.REGION["neuron"])
        if arr is None:
            return np.zeros((C.N_NEURONS, _NPARAM), dtype=np.int64)
        codes = arr.reshape(C.N_NEURONS, hal.NEURON_STRIDE)[:, :_NPARAM].astype(np.int64)
        return np.minimum(codes, hal.CODE_MAX)  # the DAC ignores bits above its width

    def neuron_values(self, chip: int) -> np.ndarray:
        """Physical parameter values (512, 12) including circuit variation."""
        return self.neuron_codes(chip) / hal.CODE_MAX * _HW_MAX * self._gain(chip)

    def synapses(self, chip: int):
        """(weights, decoders) as (448, 256) arrays in logical row order."""
        arr = self.regs.block(chip, hal.REGION["synapse"])
        if arr is None:
            z = np.zeros((C.N_SYNAPSE_ROWS, C.N_COLUMNS), dtype=np.uint8)
            return z, z
        words = arr.reshape(C.N_SYNAPSE_ROWS, C.N_COLUMNS)[_ROW_PERM]
        return ((words >> 4) & 15).astype(np.uint8), (words & 15).astype(np.uint8)

    def armed(self, fpga: int) -> bool:
        arr = self.regs.block(fpga, hal.REGION["fpga"])
        return bool(arr is not None and arr[0] & 1)

    # ----------------------------------------------------------------- playback

    def upload_playback(self, fpga: int, times, addresses) -> int:
        """Store a playback buffer for one FPGA (times in ticks). Replaces any previous buffer."""
        times = np.asarray(times, dtype=np.int64).ravel()
        addresses = np.asarray(addresses, dtype=np.int64).ravel()
        if times.shape != addresses.shape:
            raise DeviceError("playback times and addresses differ in length")
        if not 0 <= fpga < C.N_FPGA:
            raise DeviceError(f"no FPGA {fpga}")
        if len(times) > PLAYBACK_BUDGET:
            raise DeviceError(f"{len(times)} playback entries exceed the buffer of {PLAYBACK_BUDGET}")
        if len(times) and (times.min() < 0 or addresses.min() < 0 or addresses.max() > 0xFFFF):
            raise DeviceError("playback entries out of range")
        order = np.argsort(times, kind="stable")
        with self.lock:
            self.playback[fpga] = (times[order], addresses[order])
        return len(times)

    def clear_playback(self) -> None:
        with self.lock:
            self.playback.clear()

    # ---------------------------------------------------------------------- run

    def run(self, duration: int, jitter: int = 0, bandwidth_limit: int | None = None, seed: int = 0,
            sample_interval: int = 10) -> dict:
        """Integrate ``duration`` ticks; returns the counters.  Results via :meth:`readout`."""
        with self.lock:
            return self._run(int(duration), int(jitter), bandwidth_limit, seed, int(sample_interval))

    def _run(self, duration, jitter, bandwidth_limit, seed, sample_interval):
        if duration <= 0:
            raise DeviceError("run duration must be positive")
        if jitter < 0 or sample_interval < 1:
            raise DeviceError("jitter must be >= 0 and sample_interval >= 1")
        if bandwidth_limit is not None and bandwidth_limit < 0:
            raise DeviceError("bandwidth limit must be non-negative")
        armed = [f for f in range(C.N_FPGA) if self.armed(f)]
        if not armed:
            raise ProtocolError("run before trigger arm: no FPGA trigger is armed")
        unarmed = sorted(set(self.playback) - set(armed))
        if unarmed:
            raise ProtocolError(f"playback on FPGA {unarmed[0]} but its trigger is not armed")
        self.result = None
        fabric = self.fabric()

        # neurons to integrate
        chips, blocks, index = [], [], {}
        n_total = 0
        for chip in sorted(fabric.chips):
            if not fabric.chips[chip].clock:
                continue
            codes = self.neuron_codes(chip)
            active = np.flatnonzero(codes.any(axis=1))
            if not len(active):
                continue
            lookup = np.full(C.N_NEURONS, -1, dtype=np.int64)
            lookup[active] = n_total + np.arange(len(active))
            index[chip] = lookup
            chips.append((chip, active))
            blocks.append(self.neuron_values(chip)[active])
            n_total += len(active)
        values = np.concatenate(blocks) if blocks else np.zeros((0, _NPARAM))
        pop = AdExPopulation(AdExParameters.from_rows(values, c_mem=calib.C_HW), self.dt) if n_total else None
        i_gmax = values[:, hal.NEURON_PARAMETERS.index("i_gmax")] if n_total else np.zeros(0)

        arrivals: dict[int, list] = {}

        def schedule(t0, targets):
            for ticks, c, n, weight, gmax_div in targets:
                lookup = index.get(c)
                if lookup is None or lookup[n] < 0:
                    continue
                g = int(lookup[n])
                t = t0 + ticks
                if t < duration:
                    arrivals.setdefault(t, []).append((g, weight / 15.0 * i_gmax[g] / (gmax_div + 1)))

        # playback release
        rng = np.random.default_rng(seed)
        counters = dict(injected=0, delivered=0, dropped=0, dropped_bandwidth=0, dropped_late=0, unroutable=0)
        for fpga in sorted(self.playback):
            times, addrs = self.playback[fpga]
            counters["injected"] += len(times)
            release = times + (rng.integers(0, jitter + 1, size=len(times)) if jitter else 0)
            order = np.argsort(release, kind="stable")
            release, addrs = release[order], addrs[order]
            keep = release < duration
            counters["dropped_late"] += int((~keep).sum())
            release, addrs = release[keep], addrs[keep]
            if bandwidth_limit is not None and len(release):
                first = np.searchsorted(release, release, side="left")
                rank = np.arange(len(release)) - first
                ok = rank < bandwidth_limit
                counters["dropped_bandwidth"] += int((~ok).sum())
                release, addrs = release[ok], addrs[ok]
            reticle = C.RETICLES[fpga]
            for t, a in zip(release.tolist(), addrs.tolist()):
                cir, line, addr = split_playback_address(a)
                if a >> 15 or cir >= len(reticle):
                    counters["unroutable"] += 1
                    continue
                chip = reticle[cir]
                cf = fabric.chips.get(chip)
                if cf is None or line not in cf.input_lines:
                    counters["unroutable"] += 1
                    continue
                reached, targets = fabric.targets(chip, line, addr, self.synapses)
                if not reached:
                    counters["unroutable"] += 1
                    continue
                counters["delivered"] += 1
                schedule(t, targets)
        counters["dropped"] = counters["dropped_bandwidth"] + counters["dropped_late"]

        # outputs and recordings
        out_of = {}  # global index -> (chip, neuron, line, address, record)
        for chip, active in chips:
            cf = fabric.chips[chip]
            for n, (line, addr, record) in cf.outputs.items():
                g = index[chip][n]
                if g >= 0:
                    out_of[int(g)] = (chip, n, line, addr, record)
        traces = []
        for chip, active in chips:
            ro = fabric.chips[chip].readout
            if ro is not None:
                traces.append({"chip": chip, "neuron": ro[0], "g": int(index[chip][ro[0]]), "v": []})
        for chip in sorted(fabric.chips):  # readout on a chip without integrated neurons
            ro = fabric.chips[chip].readout
            if ro is not None and chip not in index:
                traces.append({"chip": chip, "neuron": ro[0], "g": -1, "v": []})
        traces.sort(key=lambda tr: tr["chip"])

        spikes = []
        neuron_events = 0
        for t in range(duration):
            if pop is None:
                break
            pending = arrivals.pop(t, None)
            if pending:
                g, amp = zip(*pending)
                pop.inject(np.fromiter(g, np.int64), np.fromiter(amp, np.float64))
            fired, v_pre = pop.step()
            if t % sample_interval == 0:
                for tr in traces:
                    tr["v"].append(float(v_pre[tr["g"]]) if tr["g"] >= 0 else 0.0)
            for g in fired.tolist():
                o = out_of.get(g)
                if o is None:
                    continue
                chip, n, line, addr, record = o
                if record:
                    cir = C.HICANNOnWafer.from_enum(chip).index_in_reticle
                    spikes.append((t, chip, n, playback_address(cir, line, addr)))
                neuron_events += 1
                reached, targets = fabric.targets(chip, line, addr, self.synapses)
                schedule(t, targets)
        if pop is None:
            for tr in traces:
                tr["v"] = [0.0] * len(range(0, duration, sample_interval))
        counters["neuron_events"] = neuron_events
        counters["recorded_spikes"] = len(spikes)
        counters["integrated_neurons"] = n_total
        counters["malformed_config"] = len(fabric.malformed)
        self.result = {
            "dt": self.dt,
            "duration": duration,
            "sample_interval": sample_interval,
            "spikes": spikes,
            "traces": [{"chip": tr["chip"], "neuron": tr["neuron"], "v": tr["v"]} for tr in traces],
            "counters": counters,
            "recording": bool(traces) or any(o[4] for o in out_of.values()),
        }
        return counters

    def readout(self) -> dict:
        with self.lock:
            if self.result is None:
                raise ProtocolError("no completed run to read out")
            if not self.result["recording"]:
                raise NothingRecorded("no spike recording or membrane readout was enabled")
            return {k: v for k, v in self.result.items() if k != "recording"}

    # ----------------------------------------------------------- calibration

    def measure(self, coord, parameter: str, code: int) -> float:
        """Observed hardware value of one neuron parameter at a DAC code.

        The spike threshold is measured behaviorally: the leak potential is
        set above it and the mean membrane peak before reset is reported.
        Other parameters are read directly (with circuit variation).
        """
        if not isinstance(coord, C.NeuronOnWafer):
            raise TypeError("measurements address a NeuronOnWafer")
        if parameter not in calib.PARAMETERS:
            raise KeyError(parameter)
        code = int(code)
        if not 0 <= code <= hal.CODE_MAX:
            raise calib.OutOfDomain(f"code {code} outside [0, {hal.CODE_MAX}]")
        chip, n = coord.outer.enum, coord.inner.enum
        k = hal.NEURON_PARAMETERS.index(parameter)
        gain = self._gain(chip)[n]
        value = code / hal.CODE_MAX * _HW_MAX[k] * gain[k]
        if parameter != "v_thresh":
            return float(value)
        thr = value
        e_leak = min(1.8, thr + 0.3)
        params = AdExParameters(e_leak=e_leak, v_exp=1.8, v_thresh=thr, v_reset=max(0.0, thr - 0.3),
                                g_leak=2e-6, a=0.0, b=0.0, delta_t=0.0, tau_w=0.0, tau_ref=5e-8, tau_syn=1e-7,
                                i_gmax=0.0, c_mem=calib.C_HW)
        pop = AdExPopulation(params, self.dt)
        pop.v[:] = params.v_reset
        peaks, trace_max = [], 0.0
        for _ in range(4000):
            fired, v_pre = pop.step()
            trace_max = max(trace_max, float(v_pre[0]))
            if len(fired):
                peaks.append(float(v_pre[0]))
        return float(np.mean(peaks)) if peaks else trace_max

    # --------------------------------------------------------------- control

    def control(self, command: str, **args):
        """Dispatch a named command; the reply is JSON-serializable."""
        with self.lock:
            if command == "reset":
                self.regs.clear()
                self.playback.clear()
                self.result = None
                return {"ok": True}
            if command == "run":
                return {"counters": self.run(**args)}
            if command == "readout":
                return self.readout()
            if command == "status":
                return {"wafer": self.wafer, "dt": self.dt, "armed": [f for f in range(C.N_FPGA) if self.armed(f)],
                        "playback": {str(f): len(t) for f, (t, _) in self.playback.items()},
                        "faults": len(self.regs.faults), "completed": self.result is not None}
            if command == "upload":
                return {"entries": self.upload_playback(int(args["fpga"]), args["times"], args["addresses"])}
            if command == "clear_playback":
                self.clear_playback()
                return {"ok": True}
            if command == "set_fault":
                self.set_fault(int(args["address"]), int(args["value"]))
                return {"ok": True}
            if command == "clear_faults":
                self.clear_faults()
                return {"ok": True}
            if command == "measure":
                coord = C.NeuronOnWafer.from_enum(int(args["neuron"]))
                return {"value": self.measure(coord, args["parameter"], int(args["code"]))}
            if command == "image":
                return {str(a): w for a, w in self.image().items()}
            raise ProtocolError(f"unknown command {command!r}")
