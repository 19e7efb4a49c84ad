"""Availability database: sparse, hierarchical flags of unusable components.

A flag is stored at exactly the level it was set.  A coordinate is usable
unless it or one of its ancestors is flagged; the ancestor chain is::

    SynapseOnWafer -> SynapseRowOnWafer -> SynapseDriverOnWafer -> HICANNOnWafer -> FPGAOnWafer
    NeuronOnWafer  -> HICANNOnWafer
    BusLineOnWafer -> HICANNOnWafer

An ancestor flag always wins; an explicit re-enable of a child cannot
whitelist it inside a flagged parent.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator

from . import coord as C

FORMAT = "waferkit.availability"
VERSION = 1


class FormatVersionMismatch(ValueError):
    pass


class UnknownRegion(ValueError):
    pass


_WAFER_LEVEL = (C.HICANNOnWafer, C.FPGAOnWafer)
STORABLE_KINDS = _WAFER_LEVEL + tuple(C.ON_WAFER.values())


def normalize(coord, wafer: int | None = None) -> C.Coordinate:
    """Reduce a coordinate to its on-wafer form, checking the wafer if given."""
    if isinstance(coord, (C.HICANNGlobal, C.FPGAGlobal, C.NeuronGlobal)):
        if wafer is not None and coord.outer.value != wafer:
            raise ValueError(f"{C.format_short(coord)} is not on wafer {wafer}")
        coord = coord.inner
    if type(coord) not in STORABLE_KINDS:
        raise TypeError(f"{type(coord).__name__} is not tracked by the availability database")
    return coord


def parent(coord: C.Coordinate) -> C.Coordinate | None:
    kind = type(coord)
    if kind is C.FPGAOnWafer:
        return None
    if kind is C.HICANNOnWafer:
        return coord.to_fpga()
    inner, hicann = coord.inner, coord.outer
    if kind is C.SynapseOnWafer:
        return C.SynapseRowOnWafer(C.translate(inner, C.SynapseRowOnHICANN), hicann)
    if kind is C.SynapseRowOnWafer:
        return C.SynapseDriverOnWafer(inner.to_driver(), hicann)
    return hicann


def ancestors(coord: C.Coordinate) -> Iterator[C.Coordinate]:
    """``coord`` itself followed by every ancestor up to its FPGA."""
    while coord is not None:
        yield coord
        coord = parent(coord)


def children(coord: C.Coordinate) -> list[C.Coordinate]:
    """Direct children in the hierarchy (synapses are the leaves)."""
    kind = type(coord)
    if kind is C.FPGAOnWafer:
        return list(coord.hicanns())
    if kind is C.HICANNOnWafer:
        return ([C.SynapseDriverOnWafer(d, coord) for d in C.SynapseDriverOnHICANN.iter_all()]
                + [C.NeuronOnWafer(n, coord) for n in C.NeuronOnHICANN.iter_all()]
                + [C.BusLineOnWafer(b, coord) for b in C.BusLineOnHICANN.iter_all()])
    if kind is C.SynapseDriverOnWafer:
        return [C.SynapseRowOnWafer(r, coord.outer) for r in coord.inner.rows()]
    if kind is C.SynapseRowOnWafer:
        h, r = coord.inner.hemisphere, coord.inner.row
        return [C.SynapseOnWafer(C.SynapseOnHICANN(h, r, c), coord.outer) for c in range(C.N_COLUMNS)]
    return []


class AvailabilityDb:
    """Sparse set of not-available components of one wafer."""

    def __init__(self, wafer: int = 0, flags: Iterable[C.Coordinate] = ()):
        self.wafer = C.Wafer(wafer).value
        self._flags: set[C.Coordinate] = set()
        for f in flags:
            self._flags.add(normalize(f, self.wafer))

    def mark(self, coord, available: bool) -> "AvailabilityDb":
        c = normalize(coord, self.wafer)
        if available:
            self._flags.discard(c)
        else:
            self._flags.add(c)
        return self

    def disable(self, coord) -> "AvailabilityDb":
        return self.mark(coord, False)

    def enable(self, coord) -> "AvailabilityDb":
        return self.mark(coord, True)

    def is_flagged(self, coord) -> bool:
        """True if a flag sits at exactly this level."""
        return normalize(coord, self.wafer) in self._flags

    def is_usable(self, coord) -> bool:
        if not self._flags:
            return True
        return not any(a in self._flags for a in ancestors(normalize(coord, self.wafer)))

    # ``has`` mirrors the CLI wording
    has = is_usable

    def flags(self, kind: type | None = None) -> list[C.Coordinate]:
        found = [f for f in self._flags if kind is None or type(f) is kind]
        return sorted(found, key=lambda c: (type(c).__name__, c.enum))

    def update(self, other: "AvailabilityDb") -> "AvailabilityDb":
        if other.wafer != self.wafer:
            raise ValueError("cannot merge databases of different wafers")
        self._flags |= other._flags
        return self

    def copy(self) -> "AvailabilityDb":
        return AvailabilityDb(self.wafer, self._flags)

    def __len__(self):
        return len(self._flags)

    def __eq__(self, other):
        if not isinstance(other, AvailabilityDb):
            return NotImplemented
        return self.wafer == other.wafer and self._flags == other._flags

    def __repr__(self):
        return f"AvailabilityDb(wafer={self.wafer}, flags={len(self._flags)})"

    # persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "wafer": self.wafer,
            "flags": [{"kind": type(f).__name__, "enum": f.enum} for f in self.flags()],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "AvailabilityDb":
        if raw.get("format") != FORMAT:
            raise FormatVersionMismatch(f"not an availability database: {raw.get('format')!r}")
        if raw.get("version") != VERSION:
            raise FormatVersionMismatch(f"availability format version {raw.get('version')!r}, expected {VERSION}")
        flags = []
        for entry in raw.get("flags", []):
            kind = C.KINDS.get(entry["kind"])
            if kind not in STORABLE_KINDS:
                raise ValueError(f"unknown flag kind {entry['kind']!r}")
            flags.append(kind.from_enum(entry["enum"]))
        return cls(raw["wafer"], flags)

    def persist(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)

    save = persist

    @classmethod
    def load(cls, path) -> "AvailabilityDb":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def persist(db: AvailabilityDb, path) -> None:
    db.persist(path)


def load(path) -> AvailabilityDb:
    return AvailabilityDb.load(path)


def db_path(path, wafer: int) -> str:
    """Resolve a CLI database argument: a directory holds one file per wafer."""
    if os.path.isdir(path):
        return os.path.join(path, f"availability_W{wafer:03d}.json")
    return str(path)


def load_or_empty(path, wafer: int) -> AvailabilityDb:
    path = db_path(path, wafer)
    if not os.path.exists(path):
        return AvailabilityDb(wafer)
    db = AvailabilityDb.load(path)
    if db.wafer != wafer:
        raise ValueError(f"{path} belongs to wafer {db.wafer}, not {wafer}")
    return db


# --------------------------------------------------------------------------
# digital memory tests


def _load_dependencies() -> dict[str, type]:
    raw = json.loads(resources.files("waferkit").joinpath("data/dependencies.json").read_text())
    if raw.get("format") != "waferkit.dependencies" or raw.get("version") != 1:
        raise FormatVersionMismatch("unsupported dependency table")
    return {region: C.KINDS[unit] for region, unit in raw["regions"].items()}


DEPENDENCIES = _load_dependencies()


@dataclass(frozen=True, order=True)
class MemoryRegion:
    """One independently testable digital memory block of a chip."""

    hicann: int
    kind: str
    index: int

    def unit(self) -> C.Coordinate:
        """The functional unit that depends exclusively on this region."""
        unit_kind = DEPENDENCIES.get(self.kind)
        if unit_kind is None:
            raise UnknownRegion(f"unknown memory region kind {self.kind!r}")
        if not 0 <= self.index < unit_kind.size:
            raise UnknownRegion(f"{self.kind} index {self.index} outside [0, {unit_kind.size - 1}]")
        try:
            chip = C.HICANNOnWafer.from_enum(self.hicann)
        except C.RangeViolation as err:
            raise UnknownRegion(str(err)) from err
        return C.combine(unit_kind.from_enum(self.index), chip)


def regions_of(hicann: C.HICANNOnWafer) -> list[MemoryRegion]:
    """Every memory region of a chip, in table order."""
    return [MemoryRegion(hicann.enum, kind, i)
            for kind, unit in DEPENDENCIES.items() for i in range(unit.size)]


@dataclass
class MemTestReport:
    results: list[tuple[MemoryRegion, bool]]
    seed: int = 0
    config: str = "nominal"
    wafer: int = 0

    def __post_init__(self):
        seen = set()
        for region, _ in self.results:
            if region in seen:
                raise ValueError(f"region {region} appears twice in the report")
            seen.add(region)

    @property
    def failures(self) -> list[MemoryRegion]:
        return [r for r, ok in self.results if not ok]

    def to_dict(self) -> dict:
        return {
            "format": "waferkit.memtest",
            "version": 1,
            "wafer": self.wafer,
            "seed": self.seed,
            "config": self.config,
            "results": [[r.hicann, r.kind, r.index, bool(ok)] for r, ok in self.results],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "MemTestReport":
        if raw.get("format") != "waferkit.memtest" or raw.get("version") != 1:
            raise FormatVersionMismatch("unsupported memtest report")
        results = [(MemoryRegion(h, k, i), ok) for h, k, i, ok in raw["results"]]
        return cls(results, raw.get("seed", 0), raw.get("config", "nominal"), raw.get("wafer", 0))


def derive_from_memtest(report: MemTestReport) -> AvailabilityDb:
    """Flags for the largest units that depend only on failing memories.

    A unit is dead when its own region failed, or when it has children and
    all of them are dead.  Only dead units whose parent is alive are flagged,
    which is the unique minimal flag set in a tree hierarchy.
    """
    dead: set[C.Coordinate] = {region.unit() for region in report.failures}
    delta = AvailabilityDb(report.wafer)
    if not dead:
        return delta

    # dead units make their subtrees dead; collapse upward where all siblings died
    def subtree_dead(node) -> bool:
        return any(a in dead for a in ancestors(node))

    candidates = set()
    for unit in dead:
        for a in ancestors(unit):
            candidates.add(a)
    memo: dict = {}

    def collapsed(node) -> bool:
        if node in memo:
            return memo[node]
        if subtree_dead(node):
            memo[node] = True
            return True
        kids = children(node)
        # synapse rows are the finest tested unit; their synapses never fail alone
        if not kids or type(node) is C.SynapseRowOnWafer:
            memo[node] = False
            return False
        result = all(k in candidates and collapsed(k) for k in kids)
        memo[node] = result
        return result

    # walk from the top so the largest collapsed unit wins
    for node in sorted(candidates, key=lambda c: _depth(c)):
        if collapsed(node) and not any(collapsed(a) for a in list(ancestors(node))[1:]):
            delta.mark(node, False)
    return delta


def _depth(coord) -> int:
    return sum(1 for _ in ancestors(coord))
