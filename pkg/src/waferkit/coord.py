"""Typed, ranged, hierarchical coordinates for every addressable wafer entity.

Coordinates are immutable values.  Every enumerable kind has a gapless,
row-major enumeration (``from_enum`` / ``.enum``), composed kinds (``XOnY``)
are built with :func:`combine` and taken apart with :func:`project`, and a
short string format (``W006H005``) round-trips through :func:`format_short`
and :func:`parse_short`.

The wafer layout table and bus-line counts are read from the bundled
``data/topology.json``.  They are stand-ins: the real wafer grid is not
published.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import ClassVar, Iterator


class CoordinateError(Exception):
    pass


class RangeViolation(CoordinateError, ValueError):
    def __init__(self, kind: str, value: int, min: int, max: int):
        self.kind = kind
        self.value = value
        self.min = min
        self.max = max
        super().__init__(f"{kind}: {value} outside [{min}, {max}]")


class ParseError(CoordinateError, ValueError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


class IncompatibleKinds(CoordinateError, TypeError):
    pass


class NotAConstituent(CoordinateError, TypeError):
    pass


class NoRule(CoordinateError):
    pass


class NeighborOutsideWafer(CoordinateError):
    pass


# --------------------------------------------------------------------------
# topology constants


@dataclass(frozen=True)
class Topology:
    version: int
    wafer_max_id: int
    grid_width: int
    row_widths: tuple[int, ...]
    reticle_width: int
    reticle_height: int
    neuron_columns: int
    hemispheres: int
    synapse_rows_per_hemisphere: int
    horizontal_lines: int
    vertical_lines_per_side: int
    switch_period: int
    switch_stride: int
    input_line: int
    driver_line_period: int

    @property
    def grid_height(self) -> int:
        return len(self.row_widths)

    @property
    def n_hicanns(self) -> int:
        return sum(self.row_widths)

    @property
    def row_offsets(self) -> tuple[int, ...]:
        return tuple((self.grid_width - w) // 2 for w in self.row_widths)


SUPPORTED_TOPOLOGY_VERSIONS = (1,)


def load_topology(path=None) -> Topology:
    """Read a topology file (bundled default when ``path`` is None)."""
    if path is None:
        text = resources.files("waferkit").joinpath("data/topology.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    if raw.get("format") != "waferkit.topology" or raw.get("version") not in SUPPORTED_TOPOLOGY_VERSIONS:
        raise ValueError(f"unsupported topology file: {raw.get('format')} v{raw.get('version')}")
    w, h, r = raw["wafer"], raw["hicann"], raw["routing"]
    topo = Topology(
        version=raw["version"],
        wafer_max_id=w["max_id"],
        grid_width=w["grid_width"],
        row_widths=tuple(w["row_widths"]),
        reticle_width=w["reticle_width"],
        reticle_height=w["reticle_height"],
        neuron_columns=h["neuron_columns"],
        hemispheres=h["hemispheres"],
        synapse_rows_per_hemisphere=h["synapse_rows_per_hemisphere"],
        horizontal_lines=h["horizontal_lines"],
        vertical_lines_per_side=h["vertical_lines_per_side"],
        switch_period=r["switch_period"],
        switch_stride=r["switch_stride"],
        input_line=r["input_line"],
        driver_line_period=r["driver_line_period"],
    )
    _validate_topology(topo)
    return topo


def _validate_topology(t: Topology) -> None:
    if len(t.row_widths) % t.reticle_height:
        raise ValueError("row count must be a multiple of the reticle height")
    for i, width in enumerate(t.row_widths):
        if width % t.reticle_width or width > t.grid_width or (t.grid_width - width) % 2:
            raise ValueError(f"row {i}: width {width} does not tile into reticles")
    for p in range(0, len(t.row_widths), t.reticle_height):
        if len(set(t.row_widths[p:p + t.reticle_height])) != 1:
            raise ValueError(f"rows {p}..{p + t.reticle_height - 1} differ in width")


TOPOLOGY = load_topology()


# --------------------------------------------------------------------------
# ranged integers


class RangedValue:
    """An integer that can never leave ``[min, max]``."""

    __slots__ = ("_value", "_min", "_max")

    def __init__(self, value: int, min: int, max: int, kind: str = "RangedValue"):
        value = _check(kind, value, min, max)
        object.__setattr__(self, "_value", value)
        object.__setattr__(self, "_min", min)
        object.__setattr__(self, "_max", max)

    value = property(lambda self: self._value)
    min = property(lambda self: self._min)
    max = property(lambda self: self._max)

    def __setattr__(self, name, value):
        raise AttributeError("RangedValue is immutable")

    def __int__(self):
        return self._value

    __index__ = __int__

    def __eq__(self, other):
        if isinstance(other, RangedValue):
            return (self._value, self._min, self._max) == (other._value, other._min, other._max)
        return NotImplemented

    def __hash__(self):
        return hash((self._value, self._min, self._max))

    def __repr__(self):
        return f"RangedValue({self._value}, {self._min}, {self._max})"


def _check(kind: str, value, lo: int, hi: int) -> int:
    if type(value) is int and lo <= value <= hi:
        return value
    if isinstance(value, bool):
        raise TypeError(f"{kind}: expected an integer, got {value!r}")
    if not isinstance(value, int):
        try:
            as_int = int(value)
        except (TypeError, ValueError):
            raise TypeError(f"{kind}: expected an integer, got {value!r}") from None
        if as_int != value:
            raise TypeError(f"{kind}: expected an integer, got {value!r}")
        value = as_int
    if not lo <= value <= hi:
        raise RangeViolation(kind, int(value), lo, hi)
    return int(value)


# small leaf kinds are immutable, so instances are shared
_INTERNED: dict[type, dict[int, "Coordinate"]] = {}


def _intern(cls):
    _INTERNED[cls] = {}
    return cls


class Enum(int):
    """Marks an integer as an enumeration index, e.g. ``HICANNOnWafer(Enum(5))``."""

    def __repr__(self):
        return f"Enum({int(self)})"


# --------------------------------------------------------------------------
# base classes


class Coordinate:
    """Base of all coordinate kinds; equality and hashing go by (kind, enum)."""

    __slots__ = ("_enum",)
    size: ClassVar[int] = 0

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def enum(self) -> int:
        return self._enum

    @classmethod
    def from_enum(cls, value: int):
        value = _check(f"{cls.__name__}.enum", value, 0, cls.size - 1)
        interned = _INTERNED.get(cls)
        if interned is not None:
            obj = interned.get(value)
            if obj is not None:
                return obj
        obj = object.__new__(cls)
        object.__setattr__(obj, "_enum", value)
        obj._after_enum()
        if interned is not None:
            interned[value] = obj
        return obj

    def _after_enum(self) -> None:
        pass

    @classmethod
    def iter_all(cls) -> Iterator["Coordinate"]:
        for i in range(cls.size):
            yield cls.from_enum(i)

    def __eq__(self, other):
        if type(other) is type(self):
            return self._enum == other._enum
        return NotImplemented

    def __hash__(self):
        return hash((type(self).__name__, self._enum))

    def __lt__(self, other):
        if type(other) is type(self):
            return self._enum < other._enum
        return NotImplemented

    def __reduce__(self):
        return (type(self).from_enum, (self._enum,))

    def to(self, kind):
        """Project onto a constituent kind, or translate along a documented rule."""
        try:
            return project(self, kind)
        except NotAConstituent:
            return translate(self, kind)


class _Grid(Coordinate):
    """Coordinate made of named integer fields with a row-major enumeration."""

    __slots__ = ("_values",)
    _fields: ClassVar[tuple[str, ...]] = ()

    def __init__(self, *args, **kwargs):
        if len(args) == 1 and not kwargs and (isinstance(args[0], Enum) or len(self._fields) == 1):
            value = _check(f"{type(self).__name__}.enum", args[0], 0, self.size - 1)
            object.__setattr__(self, "_enum", value)
            object.__setattr__(self, "_values", self._decode(value))
            return
        if len(args) > len(self._fields):
            raise TypeError(f"{type(self).__name__} takes at most {len(self._fields)} fields")
        given = dict(zip(self._fields, args))
        for key, val in kwargs.items():
            if key not in self._fields or key in given:
                raise TypeError(f"{type(self).__name__}: unexpected or repeated field {key!r}")
            given[key] = val
        missing = [f for f in self._fields if f not in given]
        if missing:
            raise TypeError(f"{type(self).__name__}: missing fields {missing}")
        values = tuple(given[f] for f in self._fields)
        values = self._validate(values)
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_enum", self._encode(values))

    def _after_enum(self):
        object.__setattr__(self, "_values", self._decode(self._enum))

    def __getattr__(self, name):
        fields = type(self)._fields
        if name in fields:
            return self._values[fields.index(name)]
        raise AttributeError(name)

    def __repr__(self):
        if len(self._fields) == 1:
            return f"{type(self).__name__}({self._values[0]})"
        inner = ", ".join(f"{f}={v}" for f, v in zip(self._fields, self._values))
        return f"{type(self).__name__}({inner})"

    # subclasses provide these three
    def _validate(self, values):
        raise NotImplementedError

    def _encode(self, values) -> int:
        raise NotImplementedError

    @classmethod
    def _decode(cls, enum: int):
        raise NotImplementedError


class _Linear(_Grid):
    """Single-field kind whose enum is the value itself."""

    _fields = ("id",)

    def _validate(self, values):
        return (_check(type(self).__name__, values[0], 0, self.size - 1),)

    def _encode(self, values):
        return values[0]

    @classmethod
    def _decode(cls, enum):
        return (enum,)

    @property
    def value(self) -> int:
        return self._enum


class _Rect(_Grid):
    """Rectangular grid; ``_extent`` lists the size of each field, slowest first."""

    _extent: ClassVar[tuple[int, ...]] = ()

    def _validate(self, values):
        name = type(self).__name__
        return tuple(_check(f"{name}.{f}", v, 0, n - 1) for f, v, n in zip(self._fields, values, self._extent))

    def _encode(self, values):
        enum = 0
        for v, n in zip(values, self._extent):
            enum = enum * n + v
        return enum

    @classmethod
    def _decode(cls, enum):
        out = []
        for n in reversed(cls._extent):
            enum, v = divmod(enum, n)
            out.append(v)
        return tuple(reversed(out))


# --------------------------------------------------------------------------
# wafer-level kinds

_T = TOPOLOGY
N_HICANN = _T.n_hicanns
N_COLUMNS = _T.neuron_columns
N_HEMISPHERES = _T.hemispheres
N_NEURONS = N_COLUMNS * N_HEMISPHERES
N_ROWS_PER_HEMISPHERE = _T.synapse_rows_per_hemisphere
N_SYNAPSE_ROWS = N_ROWS_PER_HEMISPHERE * N_HEMISPHERES
N_SYNAPSES = N_SYNAPSE_ROWS * N_COLUMNS
N_DRIVERS_PER_HEMISPHERE = N_ROWS_PER_HEMISPHERE // 2
N_DRIVERS = N_DRIVERS_PER_HEMISPHERE * N_HEMISPHERES
N_HLINES = _T.horizontal_lines
N_VLINES_PER_SIDE = _T.vertical_lines_per_side
N_VLINES = 2 * N_VLINES_PER_SIDE
N_BUSLINES = N_HLINES + N_VLINES
HICANNS_PER_FPGA = _T.reticle_width * _T.reticle_height


def _build_layout(t: Topology):
    row_start, xy_to_enum, enum_to_xy = [], {}, []
    for y, (width, offset) in enumerate(zip(t.row_widths, t.row_offsets)):
        row_start.append(len(enum_to_xy))
        for x in range(offset, offset + width):
            xy_to_enum[(x, y)] = len(enum_to_xy)
            enum_to_xy.append((x, y))
    # reticles row-major: reticle rows are pairs of chip rows, left to right
    reticles = []
    for p in range(0, len(t.row_widths), t.reticle_height):
        offset, width = t.row_offsets[p], t.row_widths[p]
        for k in range(width // t.reticle_width):
            x0 = offset + k * t.reticle_width
            reticles.append(tuple(
                xy_to_enum[(x, y)]
                for y in range(p, p + t.reticle_height)
                for x in range(x0, x0 + t.reticle_width)
            ))
    owner = [0] * len(enum_to_xy)
    for r, members in enumerate(reticles):
        for h in members:
            owner[h] = r
    return tuple(row_start), xy_to_enum, tuple(enum_to_xy), tuple(reticles), tuple(owner)


_ROW_START, _XY_TO_ENUM, _ENUM_TO_XY, RETICLES, _RETICLE_OF = _build_layout(_T)
N_FPGA = len(RETICLES)


@_intern
class Wafer(_Linear):
    size = _T.wafer_max_id + 1


@_intern
class FPGAOnWafer(_Linear):
    size = N_FPGA

    def hicanns(self) -> tuple["HICANNOnWafer", ...]:
        """The chips of the reticle this FPGA serves, in enum order."""
        return tuple(HICANNOnWafer.from_enum(h) for h in sorted(RETICLES[self._enum]))


@_intern
class HICANNOnWafer(_Grid):
    """Chip position on the wafer grid; enumerated row-major over the layout table."""

    _fields = ("x", "y")
    size = N_HICANN

    def _validate(self, values):
        x = _check("HICANNOnWafer.x", values[0], 0, _T.grid_width - 1)
        y = _check("HICANNOnWafer.y", values[1], 0, _T.grid_height - 1)
        offset, width = _T.row_offsets[y], _T.row_widths[y]
        if not offset <= x < offset + width:
            raise RangeViolation(f"HICANNOnWafer.x (row {y})", x, offset, offset + width - 1)
        return (x, y)

    def _encode(self, values):
        return _XY_TO_ENUM[values]

    @classmethod
    def _decode(cls, enum):
        return _ENUM_TO_XY[enum]

    def to_fpga(self) -> FPGAOnWafer:
        return FPGAOnWafer(_RETICLE_OF[self._enum])

    @property
    def index_in_reticle(self) -> int:
        return RETICLES[_RETICLE_OF[self._enum]].index(self._enum)

    def neighbor(self, direction: str) -> "HICANNOnWafer":
        dx, dy = _DIRECTIONS[direction]
        x, y = self._values[0] + dx, self._values[1] + dy
        if (x, y) not in _XY_TO_ENUM:
            raise NeighborOutsideWafer(f"{format_short(self)} has no {direction} neighbor")
        return HICANNOnWafer(x, y)

    def north(self):
        return self.neighbor("north")

    def south(self):
        return self.neighbor("south")

    def east(self):
        return self.neighbor("east")

    def west(self):
        return self.neighbor("west")


_DIRECTIONS = {"north": (0, -1), "south": (0, 1), "east": (1, 0), "west": (-1, 0)}
DIRECTIONS = tuple(_DIRECTIONS)


# --------------------------------------------------------------------------
# on-chip kinds


@_intern
class NeuronOnHICANN(_Rect):
    """Neuron circuit; ``y`` selects the top (0) or bottom (1) hemisphere row."""

    _fields = ("x", "y")
    _extent = (N_COLUMNS, N_HEMISPHERES)
    size = N_NEURONS

    # enum = y * 256 + x, i.e. row-major with y as the slow index
    def _encode(self, values):
        return values[1] * N_COLUMNS + values[0]

    @classmethod
    def _decode(cls, enum):
        y, x = divmod(enum, N_COLUMNS)
        return (x, y)


class SynapseOnHICANN(_Rect):
    _fields = ("hemisphere", "row", "column")
    _extent = (N_HEMISPHERES, N_ROWS_PER_HEMISPHERE, N_COLUMNS)
    size = N_SYNAPSES


@_intern
class SynapseRowOnHICANN(_Rect):
    _fields = ("hemisphere", "row")
    _extent = (N_HEMISPHERES, N_ROWS_PER_HEMISPHERE)
    size = N_SYNAPSE_ROWS

    def to_driver(self) -> "SynapseDriverOnHICANN":
        return SynapseDriverOnHICANN(self.hemisphere, self.row // 2)


@_intern
class SynapseDriverOnHICANN(_Rect):
    """Driver feeding two adjacent synapse rows of one hemisphere."""

    _fields = ("hemisphere", "index")
    _extent = (N_HEMISPHERES, N_DRIVERS_PER_HEMISPHERE)
    size = N_DRIVERS

    def rows(self) -> tuple[SynapseRowOnHICANN, SynapseRowOnHICANN]:
        return (SynapseRowOnHICANN(self.hemisphere, 2 * self.index),
                SynapseRowOnHICANN(self.hemisphere, 2 * self.index + 1))


HORIZONTAL, VERTICAL = "horizontal", "vertical"
LEFT, RIGHT = 0, 1


@_intern
class BusLineOnHICANN(_Grid):
    """Horizontal (enum 0..63) or vertical (left side, then right side) bus line."""

    _fields = ("orientation", "side", "index")
    size = N_BUSLINES

    def _validate(self, values):
        orientation, side, index = values
        if orientation == HORIZONTAL:
            if side is not None:
                raise TypeError("horizontal bus lines have no side")
            return (HORIZONTAL, None, _check("BusLineOnHICANN.index", index, 0, N_HLINES - 1))
        if orientation == VERTICAL:
            side = _check("BusLineOnHICANN.side", side, 0, 1)
            return (VERTICAL, side, _check("BusLineOnHICANN.index", index, 0, N_VLINES_PER_SIDE - 1))
        raise TypeError(f"unknown orientation {orientation!r}")

    def _encode(self, values):
        orientation, side, index = values
        if orientation == HORIZONTAL:
            return index
        return N_HLINES + side * N_VLINES_PER_SIDE + index

    @classmethod
    def _decode(cls, enum):
        if enum < N_HLINES:
            return (HORIZONTAL, None, enum)
        side, index = divmod(enum - N_HLINES, N_VLINES_PER_SIDE)
        return (VERTICAL, side, index)

    @classmethod
    def horizontal(cls, index: int) -> "BusLineOnHICANN":
        return cls(HORIZONTAL, None, index)

    @classmethod
    def vertical(cls, side: int, index: int) -> "BusLineOnHICANN":
        return cls(VERTICAL, side, index)

    @property
    def is_horizontal(self) -> bool:
        return self._enum < N_HLINES

    @property
    def vertical_enum(self) -> int:
        """Index among the 256 vertical lines (left side first)."""
        if self.is_horizontal:
            raise ValueError("not a vertical line")
        return self._enum - N_HLINES


# --------------------------------------------------------------------------
# composition


class Composed(Coordinate):
    """Pair of an inner coordinate placed on an outer one (``XOnY``)."""

    __slots__ = ("_inner", "_outer")
    inner_kind: ClassVar[type] = Coordinate
    outer_kind: ClassVar[type] = Coordinate

    def __init__(self, inner, outer):
        if type(inner) is not self.inner_kind or type(outer) is not self.outer_kind:
            raise IncompatibleKinds(
                f"{type(self).__name__} needs ({self.inner_kind.__name__}, {self.outer_kind.__name__}), "
                f"got ({type(inner).__name__}, {type(outer).__name__})")
        object.__setattr__(self, "_inner", inner)
        object.__setattr__(self, "_outer", outer)
        object.__setattr__(self, "_enum", outer.enum * self.inner_kind.size + inner.enum)

    def _after_enum(self):
        o, i = divmod(self._enum, self.inner_kind.size)
        object.__setattr__(self, "_inner", self.inner_kind.from_enum(i))
        object.__setattr__(self, "_outer", self.outer_kind.from_enum(o))

    @property
    def inner(self):
        return self._inner

    @property
    def outer(self):
        return self._outer

    def __iter__(self):
        return iter((self._inner, self._outer))

    def __repr__(self):
        return f"{type(self).__name__}({self._inner!r}, {self._outer!r})"


COMPOSITIONS: dict[tuple[type, type], type] = {}


def _composed(name: str, inner: type, outer: type) -> type:
    cls = type(name, (Composed,), {
        "__slots__": (),
        "inner_kind": inner,
        "outer_kind": outer,
        "size": inner.size * outer.size,
        "__module__": __name__,
    })
    COMPOSITIONS[(inner, outer)] = cls
    return cls


NeuronOnWafer = _composed("NeuronOnWafer", NeuronOnHICANN, HICANNOnWafer)
SynapseOnWafer = _composed("SynapseOnWafer", SynapseOnHICANN, HICANNOnWafer)
SynapseRowOnWafer = _composed("SynapseRowOnWafer", SynapseRowOnHICANN, HICANNOnWafer)
SynapseDriverOnWafer = _composed("SynapseDriverOnWafer", SynapseDriverOnHICANN, HICANNOnWafer)
BusLineOnWafer = _composed("BusLineOnWafer", BusLineOnHICANN, HICANNOnWafer)
HICANNGlobal = _composed("HICANNGlobal", HICANNOnWafer, Wafer)
FPGAGlobal = _composed("FPGAGlobal", FPGAOnWafer, Wafer)
NeuronGlobal = _composed("NeuronGlobal", NeuronOnWafer, Wafer)

ON_WAFER = {inner: cls for (inner, outer), cls in COMPOSITIONS.items() if outer is HICANNOnWafer}

KINDS: dict[str, type] = {
    cls.__name__: cls
    for cls in (Wafer, FPGAOnWafer, HICANNOnWafer, NeuronOnHICANN, SynapseOnHICANN,
                SynapseRowOnHICANN, SynapseDriverOnHICANN, BusLineOnHICANN, *COMPOSITIONS.values())
}


def construct(kind, *values, enum: int | None = None, **fields):
    """Build a coordinate of ``kind`` from field values or an enum; never clamps."""
    if isinstance(kind, str):
        kind = KINDS[kind]
    if enum is not None:
        if values or fields:
            raise TypeError("give either an enum or field values")
        return kind.from_enum(enum)
    return kind(*values, **fields)


def enumerate_kind(kind) -> list:
    """All coordinates of ``kind`` in enum order."""
    if isinstance(kind, str):
        kind = KINDS[kind]
    return [kind.from_enum(i) for i in range(kind.size)]


iter_all = enumerate_kind


def combine(inner: Coordinate, outer: Coordinate) -> Composed:
    cls = COMPOSITIONS.get((type(inner), type(outer)))
    if cls is None:
        raise IncompatibleKinds(f"no composition of {type(inner).__name__} on {type(outer).__name__}")
    return cls(inner, outer)


def project(coord: Coordinate, kind: type) -> Coordinate:
    """Return the constituent of ``coord`` of the given kind, exactly as stored."""
    if type(coord) is kind:
        return coord
    if isinstance(coord, Composed):
        for part in (coord.inner, coord.outer):
            try:
                return project(part, kind)
            except NotAConstituent:
                pass
    raise NotAConstituent(f"{kind.__name__} is not part of {type(coord).__name__}")


def on_wafer(inner: Coordinate, hicann: HICANNOnWafer) -> Composed:
    return combine(inner, hicann)


# --------------------------------------------------------------------------
# horizontal translation


def _synapse_to_neuron(s: SynapseOnHICANN) -> NeuronOnHICANN:
    return NeuronOnHICANN(x=s.column, y=s.hemisphere)


_RULES = {
    (SynapseOnHICANN, NeuronOnHICANN): _synapse_to_neuron,
    (SynapseOnHICANN, SynapseRowOnHICANN): lambda s: SynapseRowOnHICANN(s.hemisphere, s.row),
    (SynapseOnHICANN, SynapseDriverOnHICANN): lambda s: SynapseDriverOnHICANN(s.hemisphere, s.row // 2),
    (SynapseRowOnHICANN, SynapseDriverOnHICANN): SynapseRowOnHICANN.to_driver,
    (HICANNOnWafer, FPGAOnWafer): HICANNOnWafer.to_fpga,
}


def translate(coord: Coordinate, target) -> Coordinate:
    """Translate along a layout rule; ``target`` is a kind or a compass direction."""
    if isinstance(target, str):
        if target not in _DIRECTIONS:
            raise NoRule(f"unknown direction {target!r}")
        if isinstance(coord, HICANNOnWafer):
            return coord.neighbor(target)
        if isinstance(coord, HICANNGlobal):
            return HICANNGlobal(coord.inner.neighbor(target), coord.outer)
        raise NoRule(f"{type(coord).__name__} has no grid neighbors")
    rule = _RULES.get((type(coord), target))
    if rule is not None:
        return rule(coord)
    # lift on-chip rules to their on-wafer compositions
    if isinstance(coord, Composed) and coord.outer_kind is HICANNOnWafer and getattr(target, "outer_kind", None) is HICANNOnWafer:
        rule = _RULES.get((coord.inner_kind, target.inner_kind))
        if rule is not None:
            return target(rule(coord.inner), coord.outer)
    if isinstance(coord, Composed) and coord.outer_kind is HICANNOnWafer and target is FPGAOnWafer:
        return coord.outer.to_fpga()
    raise NoRule(f"no translation from {type(coord).__name__} to {getattr(target, '__name__', target)}")


# --------------------------------------------------------------------------
# short format

_PREFIX = {Wafer: "W", HICANNOnWafer: "H", FPGAOnWafer: "F", NeuronOnHICANN: "N"}
_PREFIX_KIND = {v: k for k, v in _PREFIX.items()}
SHORT_FORMAT_KINDS = (Wafer, HICANNOnWafer, FPGAOnWafer, NeuronOnHICANN,
                      HICANNGlobal, FPGAGlobal, NeuronOnWafer, NeuronGlobal)
_TOKEN = re.compile(r"([A-Za-z])(\d*)")
_WELL_FORMED = re.compile(r"(?:[WHFNwhfn]\d+)+")
_PAIR = re.compile(r"([A-Za-z])(\d+)")


def _parts(coord) -> list:
    if isinstance(coord, Composed):
        return _parts(coord.outer) + _parts(coord.inner)
    return [coord]


def format_short(coord: Coordinate) -> str:
    out = []
    for part in _parts(coord):
        prefix = _PREFIX.get(type(part))
        if prefix is None:
            raise TypeError(f"{type(coord).__name__} has no short format")
        out.append(f"{prefix}{part.enum:03d}")
    return "".join(out)


def parse_short(text: str) -> Coordinate:
    """Parse ``W3``, ``W33H0``, ``H5N12``, ``W1F7`` ...; digits need not be padded."""
    parts, positions, pos = [], [], 0
    if not text:
        raise ParseError("empty coordinate", text, 0)
    if _WELL_FORMED.fullmatch(text):
        # fast path; any failure falls through to the positional parser for its diagnostics
        try:
            result = None
            for letter, digits in reversed(_PAIR.findall(text)):
                part = _PREFIX_KIND[letter.upper()].from_enum(int(digits))
                result = part if result is None else combine(result, part)
            return result
        except (RangeViolation, IncompatibleKinds):
            pass
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        letter, digits = m.group(1).upper(), m.group(2)
        kind = _PREFIX_KIND.get(letter)
        if kind is None:
            raise ParseError(f"unknown prefix {m.group(1)!r}", text, pos)
        if not digits:
            raise ParseError(f"prefix {letter!r} needs digits", text, m.end())
        try:
            parts.append(kind.from_enum(int(digits)))
        except RangeViolation as err:
            raise ParseError(str(err), text, pos + 1) from err
        positions.append(pos)
        pos = m.end()
    result = parts[-1]
    for part, at in zip(reversed(parts[:-1]), reversed(positions[:-1])):
        try:
            result = combine(result, part)
        except IncompatibleKinds as err:
            raise ParseError(f"{type(part).__name__} cannot contain {type(result).__name__}", text, at) from err
    return result


from_string = parse_short
short_format = format_short
