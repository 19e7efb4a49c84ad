"""Hardware containers and their bit-exact register encoding.

Every container maps to a fixed set of 32-bit registers.  An address is
``chip:9 | region:4 | offset:19``; region codes and word layouts come from
the bundled ``data/registers.json``.  ``decode(encode(c)) == c`` holds for
every container value.

Handles apply encoded writes to a backend: an in-memory dump, an in-process
simulated device, or a remote device over the transport.  Entity access
through a handle is gated by its availability database.
"""
from __future__ import annotations

import functools
import json
import threading
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import coord as C


class HalError(Exception):
    pass


class MalformedWords(HalError, ValueError):
    pass


class Unavailable(HalError):
    def __init__(self, coord):
        self.coord = coord
        try:
            name = C.format_short(coord)
        except TypeError:
            name = repr(coord)
        super().__init__(f"{name} is flagged unavailable")


class TransportError(HalError):
    pass


# --------------------------------------------------------------------------
# register map

_MAP = json.loads(resources.files("waferkit").joinpath("data/registers.json").read_text())
if _MAP.get("format") != "waferkit.registers" or _MAP.get("version") != 1:
    raise ImportError("unsupported register map file")

CHIP_BITS = _MAP["address"]["chip_bits"]
REGION_BITS = _MAP["address"]["region_bits"]
OFFSET_BITS = _MAP["address"]["offset_bits"]
REGION = dict(_MAP["regions"])
WORD_MASK = 0xFFFFFFFF


def address(chip: int, region: str | int, offset: int) -> int:
    r = REGION[region] if isinstance(region, str) else region
    if not 0 <= chip < (1 << CHIP_BITS) or not 0 <= offset < (1 << OFFSET_BITS):
        raise ValueError(f"address fields out of range: chip={chip} offset={offset}")
    return (chip << (REGION_BITS + OFFSET_BITS)) | (r << OFFSET_BITS) | offset


def split_address(addr: int) -> tuple[int, int, int]:
    offset = addr & ((1 << OFFSET_BITS) - 1)
    region = (addr >> OFFSET_BITS) & ((1 << REGION_BITS) - 1)
    chip = addr >> (REGION_BITS + OFFSET_BITS)
    return chip, region, offset


class RegisterWrite(NamedTuple):
    address: int
    word: int

    def check(self) -> "RegisterWrite":
        if not 0 <= self.address <= WORD_MASK or not 0 <= self.word <= WORD_MASK:
            raise ValueError(f"register write out of 32-bit range: {self}")
        chip, region, _ = split_address(self.address)
        if region not in REGION.values():
            raise ValueError(f"address {self.address:#010x} is not in the register map")
        return self


class Layout:
    """Named bit fields inside one word; bits outside all fields are reserved."""

    def __init__(self, fields: Sequence[Sequence]):
        self.fields = [(name, lsb, width) for name, lsb, width in fields]
        self.mask = 0
        for _, lsb, width in self.fields:
            self.mask |= ((1 << width) - 1) << lsb

    def pack(self, **values) -> int:
        word = 0
        for name, lsb, width in self.fields:
            v = int(values.get(name, 0))
            if not 0 <= v < (1 << width):
                raise ValueError(f"{name}={v} does not fit in {width} bits")
            word |= v << lsb
        return word

    def unpack(self, word: int) -> dict[str, int]:
        if word & ~self.mask & WORD_MASK or word > WORD_MASK or word < 0:
            raise MalformedWords(f"reserved bits set in {word:#x}")
        return {name: (word >> lsb) & ((1 << width) - 1) for name, lsb, width in self.fields}


SYNAPSE_LAYOUT = Layout(_MAP["synapse"]["fields"])
DRIVER_LAYOUT = Layout(_MAP["driver"]["fields"])
MERGER_LAYOUT = Layout(_MAP["merger"]["fields"])
READOUT_LAYOUT = Layout(_MAP["readout"]["fields"])
CLOCK_LAYOUT = Layout(_MAP["clock"]["fields"])
TRIGGER_LAYOUT = Layout(_MAP["fpga"]["fields"])
NEURON_PARAMETERS = tuple(_MAP["neuron"]["parameters"])
NEURON_STRIDE = _MAP["neuron"]["stride"]
CODE_MAX = (1 << _MAP["neuron"]["code_bits"]) - 1
MIRRORED = frozenset(_MAP["synapse"]["mirror_hemispheres"])
XBAR_WORDS = _MAP["crossbar"]["words_per_line"]
RESET_OFFSET = _MAP["control"]["reset_offset"]
CLOCK_OFFSET = _MAP["control"]["clock_offset"]
MERGER_OUT = _MAP["merger"]["output_offset"]
MERGER_IN = _MAP["merger"]["input_offset"]
REP_H = _MAP["repeater"]["horizontal_offset"]
REP_V = _MAP["repeater"]["vertical_offset"]
TRIGGER_OFFSET = _MAP["fpga"]["trigger_offset"]

_TOPO = C.TOPOLOGY


def legal_switch(h: int, v: int) -> bool:
    """Sparse crossbar: horizontal ``h`` meets vertical ``v`` iff (v - stride*h) mod period == 0."""
    return (v - _TOPO.switch_stride * h) % _TOPO.switch_period == 0


@functools.lru_cache(maxsize=None)
def legal_verticals(h: int) -> tuple[int, ...]:
    return tuple(v for v in range(C.N_VLINES) if legal_switch(h, v))


def physical_row(hemisphere: int, row: int) -> int:
    """Row position in the memory array; mirrored hemispheres count from the far edge."""
    return C.N_ROWS_PER_HEMISPHERE - 1 - row if hemisphere in MIRRORED else row


def _mask_words(bits: Iterable[int], n_words: int) -> list[int]:
    words = [0] * n_words
    for b in bits:
        words[b >> 5] |= 1 << (b & 31)
    return words


def _mask_bits(words: Sequence[int]) -> frozenset[int]:
    out = []
    for k, w in enumerate(words):
        if not 0 <= w <= WORD_MASK:
            raise MalformedWords(f"word {w!r} is not 32-bit")
        base = k << 5
        while w:
            low = w & -w
            out.append(base + low.bit_length() - 1)
            w ^= low
    return frozenset(out)


def _ranged(name, value, hi):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if not 0 <= value <= hi:
        raise ValueError(f"{name}={value} outside [0, {hi}]")
    return int(value)


# --------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class SynapseEntry:
    weight: int = 0
    decoder: int = 0

    def __post_init__(self):
        _ranged("weight", self.weight, 15)
        _ranged("decoder", self.decoder, 15)


@dataclass(frozen=True)
class RowConfig:
    input_select: int = 0  # high 4 bits of accepted event addresses
    gmax_div: int = 0

    def __post_init__(self):
        _ranged("input_select", self.input_select, 15)
        _ranged("gmax_div", self.gmax_div, 15)


@dataclass(frozen=True)
class SynapseDriverConfig:
    enable: bool = False
    line_select: int = 0  # which of the driver's 16 reachable vertical lines it listens to
    rows: tuple[RowConfig, RowConfig] = (RowConfig(), RowConfig())

    def __post_init__(self):
        if not isinstance(self.enable, bool):
            raise TypeError("enable must be a bool")
        _ranged("line_select", self.line_select, 15)
        if len(self.rows) != 2 or not all(isinstance(r, RowConfig) for r in self.rows):
            raise TypeError("a driver has exactly two RowConfig entries")
        object.__setattr__(self, "rows", tuple(self.rows))

    def is_enabled(self) -> bool:
        return self.enable


@dataclass(frozen=True)
class NeuronAnalogConfig:
    e_leak: int = 0
    v_exp: int = 0
    v_thresh: int = 0
    v_reset: int = 0
    g_leak: int = 0
    a: int = 0
    b: int = 0
    delta_t: int = 0
    tau_w: int = 0
    tau_ref: int = 0
    tau_syn: int = 0
    i_gmax: int = 0

    def __post_init__(self):
        for name in NEURON_PARAMETERS:
            _ranged(name, getattr(self, name), CODE_MAX)

    def codes(self) -> tuple[int, ...]:
        return tuple(getattr(self, n) for n in NEURON_PARAMETERS)


@dataclass(frozen=True)
class CrossbarSwitchSet:
    """Closed switches as (horizontal line, vertical line) pairs."""

    switches: frozenset = frozenset()

    def __post_init__(self):
        sw = frozenset((int(h), int(v)) for h, v in self.switches)
        for h, v in sw:
            _ranged("horizontal line", h, C.N_HLINES - 1)
            _ranged("vertical line", v, C.N_VLINES - 1)
            if not legal_switch(h, v):
                raise ValueError(f"no crossbar switch between H{h} and V{v}")
        object.__setattr__(self, "switches", sw)

    def __len__(self):
        return len(self.switches)


@dataclass(frozen=True)
class RepeaterConfig:
    """Line continuations to the neighboring chip: horizontal lines east, vertical lines south.

    A continuation is bidirectional; west/north links are the neighbor's
    east/south settings.
    """

    east: frozenset = frozenset()
    south: frozenset = frozenset()

    def __post_init__(self):
        e = frozenset(_ranged("horizontal line", h, C.N_HLINES - 1) for h in self.east)
        s = frozenset(_ranged("vertical line", v, C.N_VLINES - 1) for v in self.south)
        object.__setattr__(self, "east", e)
        object.__setattr__(self, "south", s)


@dataclass(frozen=True, order=True)
class NeuronOutput:
    neuron: int
    line: int
    address: int
    record: bool = False

    def __post_init__(self):
        _ranged("neuron", self.neuron, C.N_NEURONS - 1)
        _ranged("line", self.line, C.N_HLINES - 1)
        _ranged("address", self.address, 63)
        if not isinstance(self.record, bool):
            raise TypeError("record must be a bool")


@dataclass(frozen=True)
class MergerConfig:
    """Which horizontal lines carry FPGA input, and where each neuron's spikes go."""

    input_lines: frozenset = frozenset()
    outputs: tuple = ()

    def __post_init__(self):
        lines = frozenset(_ranged("input line", h, C.N_HLINES - 1) for h in self.input_lines)
        outs = tuple(sorted(self.outputs))
        seen = set()
        for o in outs:
            if not isinstance(o, NeuronOutput):
                raise TypeError("outputs must be NeuronOutput entries")
            if o.neuron in seen:
                raise ValueError(f"neuron {o.neuron} has two outputs")
            seen.add(o.neuron)
        object.__setattr__(self, "input_lines", lines)
        object.__setattr__(self, "outputs", outs)

    def output_of(self, neuron: int) -> NeuronOutput | None:
        for o in self.outputs:
            if o.neuron == neuron:
                return o
        return None


@dataclass(frozen=True)
class ReadoutConfig:
    enable: bool = False
    neuron: int = 0

    def __post_init__(self):
        if not isinstance(self.enable, bool):
            raise TypeError("enable must be a bool")
        _ranged("neuron", self.neuron, C.N_NEURONS - 1)


@dataclass(frozen=True)
class ClockConfig:
    enable: bool = False
    pll: int = 0

    def __post_init__(self):
        if not isinstance(self.enable, bool):
            raise TypeError("enable must be a bool")
        _ranged("pll", self.pll, 255)


@dataclass(frozen=True)
class TriggerConfig:
    armed: bool = False

    def __post_init__(self):
        if not isinstance(self.armed, bool):
            raise TypeError("armed must be a bool")


CONTAINER_COORD = {
    SynapseEntry: C.SynapseOnWafer,
    SynapseDriverConfig: C.SynapseDriverOnWafer,
    NeuronAnalogConfig: C.NeuronOnWafer,
    CrossbarSwitchSet: C.HICANNOnWafer,
    RepeaterConfig: C.HICANNOnWafer,
    MergerConfig: C.HICANNOnWafer,
    ReadoutConfig: C.HICANNOnWafer,
    ClockConfig: C.HICANNOnWafer,
    TriggerConfig: C.FPGAOnWafer,
}
CONTAINERS = tuple(CONTAINER_COORD)


# --------------------------------------------------------------------------
# codec


def _chip(coord) -> int:
    return coord.enum if isinstance(coord, C.HICANNOnWafer) else coord.outer.enum


def _check_coord(kind, coord):
    want = CONTAINER_COORD.get(kind)
    if want is None:
        raise TypeError(f"{kind.__name__} is not a hardware container")
    if type(coord) is not want:
        raise TypeError(f"{kind.__name__} is addressed by {want.__name__}, got {type(coord).__name__}")


def _block(chip: int, region: str, start: int, n: int) -> list[int]:
    first = address(chip, region, start)
    address(chip, region, start + n - 1)
    return list(range(first, first + n))


def address_span(kind: type, coord) -> list[int]:
    """Register addresses of one container, in the order ``decode`` expects."""
    _check_coord(kind, coord)
    if kind is SynapseEntry:
        s = coord.inner
        off = (s.hemisphere * C.N_ROWS_PER_HEMISPHERE + physical_row(s.hemisphere, s.row)) * C.N_COLUMNS + s.column
        return [address(coord.outer.enum, "synapse", off)]
    if kind is SynapseDriverConfig:
        return [address(coord.outer.enum, "driver", coord.inner.enum)]
    if kind is NeuronAnalogConfig:
        base = coord.inner.enum * NEURON_STRIDE
        return _block(coord.outer.enum, "neuron", base, len(NEURON_PARAMETERS))
    if kind is CrossbarSwitchSet:
        return _block(coord.enum, "crossbar", 0, C.N_HLINES * XBAR_WORDS)
    if kind is RepeaterConfig:
        return (_block(coord.enum, "repeater", REP_H, C.N_HLINES // 32)
                + _block(coord.enum, "repeater", REP_V, C.N_VLINES // 32))
    if kind is MergerConfig:
        return (_block(coord.enum, "merger", MERGER_IN, C.N_HLINES // 32)
                + _block(coord.enum, "merger", MERGER_OUT, C.N_NEURONS))
    if kind is ReadoutConfig:
        return [address(coord.enum, "readout", 0)]
    if kind is ClockConfig:
        return [address(coord.enum, "control", CLOCK_OFFSET)]
    if kind is TriggerConfig:
        return [address(coord.enum, "fpga", TRIGGER_OFFSET)]
    raise TypeError(kind)


def encode_words(container) -> list[int]:
    """Register words of a container, aligned with :func:`address_span`."""
    kind = type(container)
    if kind is SynapseEntry:
        return [SYNAPSE_LAYOUT.pack(weight=container.weight, decoder=container.decoder)]
    if kind is SynapseDriverConfig:
        r0, r1 = container.rows
        return [DRIVER_LAYOUT.pack(enable=container.enable, line_select=container.line_select,
                                   row0_input_select=r0.input_select, row0_gmax_div=r0.gmax_div,
                                   row1_input_select=r1.input_select, row1_gmax_div=r1.gmax_div)]
    if kind is NeuronAnalogConfig:
        return list(container.codes())
    if kind is CrossbarSwitchSet:
        words = [0] * (C.N_HLINES * XBAR_WORDS)
        for h, v in container.switches:
            words[h * XBAR_WORDS + (v >> 5)] |= 1 << (v & 31)
        return words
    if kind is RepeaterConfig:
        return _mask_words(container.east, C.N_HLINES // 32) + _mask_words(container.south, C.N_VLINES // 32)
    if kind is MergerConfig:
        words = _mask_words(container.input_lines, C.N_HLINES // 32) + [0] * C.N_NEURONS
        base = C.N_HLINES // 32
        for o in container.outputs:
            words[base + o.neuron] = MERGER_LAYOUT.pack(enable=1, line=o.line, address=o.address, record=o.record)
        return words
    if kind is ReadoutConfig:
        return [READOUT_LAYOUT.pack(enable=container.enable, neuron=container.neuron)]
    if kind is ClockConfig:
        return [CLOCK_LAYOUT.pack(enable=container.enable, pll=container.pll)]
    if kind is TriggerConfig:
        return [TRIGGER_LAYOUT.pack(armed=container.armed)]
    raise TypeError(f"{kind.__name__} is not a hardware container")


def encode(container, coord) -> list[RegisterWrite]:
    _check_coord(type(container), coord)
    return [RegisterWrite(a, w) for a, w in zip(address_span(type(container), coord), encode_words(container))]


def decode(kind: type, coord, words: Sequence[int]) -> object:
    """Rebuild a container from the words at ``address_span(kind, coord)``."""
    span = len(address_span(kind, coord))
    words = [int(w) for w in words]
    if len(words) != span:
        raise MalformedWords(f"{kind.__name__} needs {span} words, got {len(words)}")
    for w in words:
        if not 0 <= w <= WORD_MASK:
            raise MalformedWords(f"word {w!r} is not 32-bit")
    try:
        return _decode(kind, words)
    except (ValueError, TypeError) as err:
        if isinstance(err, MalformedWords):
            raise
        raise MalformedWords(str(err)) from err


def _decode(kind, words):
    if kind is SynapseEntry:
        return SynapseEntry(**SYNAPSE_LAYOUT.unpack(words[0]))
    if kind is SynapseDriverConfig:
        f = DRIVER_LAYOUT.unpack(words[0])
        return SynapseDriverConfig(bool(f["enable"]), f["line_select"],
                                   (RowConfig(f["row0_input_select"], f["row0_gmax_div"]),
                                    RowConfig(f["row1_input_select"], f["row1_gmax_div"])))
    if kind is NeuronAnalogConfig:
        for w in words:
            if w > CODE_MAX:
                raise MalformedWords(f"analog code {w} exceeds {CODE_MAX}")
        return NeuronAnalogConfig(*words)
    if kind is CrossbarSwitchSet:
        switches = []
        for i, w in enumerate(words):
            if w:
                h, k = divmod(i, XBAR_WORDS)
                base = k << 5
                while w:
                    low = w & -w
                    w ^= low
                    v = base + low.bit_length() - 1
                    if not legal_switch(h, v):
                        raise MalformedWords(f"bit for illegal switch H{h}/V{v} is set")
                    switches.append((h, v))
        return CrossbarSwitchSet(frozenset(switches))
    if kind is RepeaterConfig:
        n = C.N_HLINES // 32
        return RepeaterConfig(_mask_bits(words[:n]), _mask_bits(words[n:]))
    if kind is MergerConfig:
        n = C.N_HLINES // 32
        outputs = []
        for neuron, w in enumerate(words[n:]):
            if w:
                f = MERGER_LAYOUT.unpack(w)
                if not f["enable"]:
                    raise MalformedWords(f"disabled output word for neuron {neuron} carries data")
                outputs.append(NeuronOutput(neuron, f["line"], f["address"], bool(f["record"])))
        return MergerConfig(_mask_bits(words[:n]), tuple(outputs))
    if kind is ReadoutConfig:
        f = READOUT_LAYOUT.unpack(words[0])
        return ReadoutConfig(bool(f["enable"]), f["neuron"])
    if kind is ClockConfig:
        f = CLOCK_LAYOUT.unpack(words[0])
        return ClockConfig(bool(f["enable"]), f["pll"])
    if kind is TriggerConfig:
        return TriggerConfig(bool(TRIGGER_LAYOUT.unpack(words[0])["armed"]))
    raise TypeError(kind)


# vectorized synapse blocks ---------------------------------------------------


def synapse_row_addresses(chip: int, rows: np.ndarray) -> np.ndarray:
    """Addresses of full synapse rows; ``rows`` are SynapseRowOnHICANN enums. Shape (len(rows), 256)."""
    rows = np.asarray(rows, dtype=np.int64)
    hemi, row = np.divmod(rows, C.N_ROWS_PER_HEMISPHERE)
    mirrored = np.isin(hemi, list(MIRRORED))
    phys = np.where(mirrored, C.N_ROWS_PER_HEMISPHERE - 1 - row, row)
    base = (hemi * C.N_ROWS_PER_HEMISPHERE + phys) * C.N_COLUMNS
    offsets = base[:, None] + np.arange(C.N_COLUMNS)[None, :]
    prefix = (chip << (REGION_BITS + OFFSET_BITS)) | (REGION["synapse"] << OFFSET_BITS)
    return (prefix | offsets).astype(np.uint32)


def encode_synapse_rows(chip: int, rows, weights: np.ndarray, decoders: np.ndarray):
    """(addresses, words) for whole rows; weights/decoders are (len(rows), 256) uint8."""
    weights = np.asarray(weights, dtype=np.uint32)
    decoders = np.asarray(decoders, dtype=np.uint32)
    if weights.max(initial=0) > 15 or decoders.max(initial=0) > 15:
        raise ValueError("synapse weight and decoder are 4-bit")
    words = (weights << 4) | decoders
    return synapse_row_addresses(chip, rows).ravel(), words.ravel().astype(np.uint32)


def decode_synapse_rows(words: np.ndarray):
    words = np.asarray(words, dtype=np.uint32)
    if np.any(words > 0xFF):
        raise MalformedWords("reserved synapse bits set")
    return (words >> 4).astype(np.uint8), (words & 15).astype(np.uint8)


SYNAPSE_BYTES_PER_WAFER = C.N_HICANN * C.N_SYNAPSES  # one byte of payload per synapse


# --------------------------------------------------------------------------
# handles


class Handle:
    """Access to a backend's registers, gated by an availability database."""

    def __init__(self, availability=None):
        self.availability = availability
        self.writes = 0
        self.reads = 0
        self._lock = threading.Lock()

    # backends implement these two
    def _write(self, addresses: np.ndarray, words: np.ndarray) -> None:
        raise NotImplementedError

    def _read(self, addresses: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def write_batch(self, addresses, words) -> None:
        a = np.asarray(addresses, dtype=np.uint32).ravel()
        w = np.asarray(words, dtype=np.uint32).ravel()
        if a.shape != w.shape:
            raise ValueError("addresses and words differ in length")
        if not len(a):
            return
        with self._lock:
            self._write(a, w)
            self.writes += len(a)

    def read_batch(self, addresses) -> np.ndarray:
        a = np.asarray(addresses, dtype=np.uint32).ravel()
        with self._lock:
            self.reads += len(a)
            return self._read(a)

    def write(self, writes: Iterable[RegisterWrite]) -> None:
        writes = list(writes)
        self.write_batch([w.address for w in writes], [w.word for w in writes])

    def gate(self, coord) -> None:
        if self.availability is not None and not self.availability.is_usable(coord):
            raise Unavailable(coord)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class DumpHandle(Handle):
    """Registers kept in memory; the default state of every register is 0."""

    def __init__(self, availability=None):
        super().__init__(availability)
        self.registers: dict[int, int] = {}

    def _write(self, addresses, words):
        for a, w in zip(addresses.tolist(), words.tolist()):
            chip, region, offset = split_address(a)
            if region == REGION["control"] and offset == RESET_OFFSET:
                if w & 1:
                    self._reset_chip(chip)
                continue
            self.registers[a] = w

    def _reset_chip(self, chip):
        lo = chip << (REGION_BITS + OFFSET_BITS)
        hi = (chip + 1) << (REGION_BITS + OFFSET_BITS)
        fpga = REGION["fpga"] << OFFSET_BITS
        for a in [a for a in self.registers if lo <= a < hi and (a & (((1 << REGION_BITS) - 1) << OFFSET_BITS)) != fpga]:
            del self.registers[a]

    def _read(self, addresses):
        return np.array([self.registers.get(a, 0) for a in addresses.tolist()], dtype=np.uint32)

    def image(self) -> dict[int, int]:
        return dict(self.registers)


class DeviceHandle(Handle):
    """Direct in-process access to a simulated device object."""

    def __init__(self, device, availability=None):
        super().__init__(availability)
        self.device = device

    def _write(self, addresses, words):
        self.device.write_batch(addresses, words)

    def _read(self, addresses):
        return np.asarray(self.device.read_batch(addresses), dtype=np.uint32)

    def control(self, command: str, **args):
        return self.device.control(command, **args)

    def upload_playback(self, fpga: int, times, addresses) -> int:
        return self.device.upload_playback(fpga, times, addresses)


class RemoteHandle(Handle):
    """Registers of a device reached through a transport client."""

    def __init__(self, client, availability=None):
        super().__init__(availability)
        self.client = client

    def _write(self, addresses, words):
        try:
            self.client.write_registers(addresses, words)
        except Exception as err:
            raise TransportError(str(err)) from err

    def _read(self, addresses):
        try:
            return np.asarray(self.client.read_registers(addresses), dtype=np.uint32)
        except Exception as err:
            raise TransportError(str(err)) from err

    def control(self, command: str, **args):
        try:
            return self.client.control(command, **args)
        except Exception as err:
            raise TransportError(str(err)) from err

    def upload_playback(self, fpga: int, times, addresses) -> int:
        try:
            reply = self.client.upload_playback(fpga, times, addresses)
        except Exception as err:
            raise TransportError(str(err)) from err
        return reply["entries"] if isinstance(reply, dict) else reply

    def close(self):
        self.client.close()


def write_entity(handle: Handle, coord, container) -> None:
    _check_coord(type(container), coord)
    handle.gate(coord)
    handle.write(encode(container, coord))


def read_entity(handle: Handle, kind: type, coord):
    _check_coord(kind, coord)
    handle.gate(coord)
    return decode(kind, coord, handle.read_batch(address_span(kind, coord)).tolist())


def reset_writes(chip: C.HICANNOnWafer) -> list[RegisterWrite]:
    return [RegisterWrite(address(chip.enum, "control", RESET_OFFSET), 1)]


def image_bytes(image: dict[int, int]) -> bytes:
    """Canonical byte form of a register image: sorted big-endian (address, word) pairs."""
    if not image:
        return b""
    arr = np.array(sorted(image.items()), dtype=">u4")
    return arr.tobytes()
