"""Digital memory test: write random words and their complement, read back, compare.

Each memory region of the dependency table maps to a set of register
words with a bit mask of the bits that belong to it:

* ``synapse_row``: the 256 synapse words of the row (weight and decoder bits)
* ``synapse_driver``: the driver word
* ``neuron``: the twelve parameter words (10-bit codes)
* ``bus_line``: for a horizontal line its crossbar word bits, its east
  repeater bit and its merger input bit; for a vertical line its bit in
  every crossbar word with a legal switch, and its south repeater bit

Words can be shared between regions (a crossbar word holds bits of one
horizontal and several vertical lines); a region fails when any of its own
masked bits read back wrong.  The test overwrites the configuration of the
tested chips and resets them at the end.
"""
from __future__ import annotations

import numpy as np

from . import coord as C
from . import hal
from .availability import MemoryRegion, MemTestReport, derive_from_memtest, regions_of

_NH = C.N_HLINES


def _region_words(chip: int, region: MemoryRegion) -> tuple[np.ndarray, np.ndarray]:
    """(addresses, masks) of one memory region."""
    kind, i = region.kind, region.index
    if kind == "synapse_row":
        addrs = hal.synapse_row_addresses(chip, np.array([i]))[0]
        return addrs, np.full(len(addrs), hal.SYNAPSE_LAYOUT.mask, dtype=np.uint32)
    if kind == "synapse_driver":
        return np.array([hal.address(chip, "driver", i)], dtype=np.uint32), \
            np.array([hal.DRIVER_LAYOUT.mask], dtype=np.uint32)
    if kind == "neuron":
        base = i * hal.NEURON_STRIDE
        addrs = [hal.address(chip, "neuron", base + k) for k in range(len(hal.NEURON_PARAMETERS))]
        return np.array(addrs, dtype=np.uint32), np.full(len(addrs), hal.CODE_MAX, dtype=np.uint32)
    if kind == "bus_line":
        addrs, masks = [], []
        if i < _NH:
            bits: dict[int, int] = {}
            for v in hal.legal_verticals(i):
                bits[v >> 5] = bits.get(v >> 5, 0) | (1 << (v & 31))
            for k, m in sorted(bits.items()):
                addrs.append(hal.address(chip, "crossbar", i * hal.XBAR_WORDS + k))
                masks.append(m)
            addrs.append(hal.address(chip, "repeater", hal.REP_H + (i >> 5)))
            masks.append(1 << (i & 31))
            addrs.append(hal.address(chip, "merger", hal.MERGER_IN + (i >> 5)))
            masks.append(1 << (i & 31))
        else:
            v = i - _NH
            for h in range(_NH):
                if hal.legal_switch(h, v):
                    addrs.append(hal.address(chip, "crossbar", h * hal.XBAR_WORDS + (v >> 5)))
                    masks.append(1 << (v & 31))
            addrs.append(hal.address(chip, "repeater", hal.REP_V + (v >> 5)))
            masks.append(1 << (v & 31))
        return np.array(addrs, dtype=np.uint32), np.array(masks, dtype=np.uint32)
    raise ValueError(f"no register words for memory region kind {kind!r}")


def chip_plan(chip: C.HICANNOnWafer):
    """Regions of a chip and their words: (regions, addresses, masks, region index per word)."""
    regions = regions_of(chip)
    addrs, masks, owner = [], [], []
    for k, r in enumerate(regions):
        a, m = _region_words(chip.enum, r)
        addrs.append(a)
        masks.append(m)
        owner.append(np.full(len(a), k, dtype=np.int64))
    return regions, np.concatenate(addrs), np.concatenate(masks), np.concatenate(owner)


def test_chip(handle: hal.Handle, chip: C.HICANNOnWafer, rng: np.random.Generator) -> list[tuple[MemoryRegion, bool]]:
    regions, addrs, masks, owner = chip_plan(chip)
    unique, inverse = np.unique(addrs, return_inverse=True)
    pattern = rng.integers(0, 1 << 32, size=len(unique), dtype=np.uint64).astype(np.uint32)
    bad = np.zeros(len(regions), dtype=bool)
    for words in (pattern, ~pattern):
        handle.write_batch(unique, words)
        got = handle.read_batch(unique)
        wrong = ((got ^ words)[inverse] & masks) != 0
        bad[owner[wrong]] = True
    handle.write(hal.reset_writes(chip))
    return [(r, not b) for r, b in zip(regions, bad)]


def run_memtest(handle: hal.Handle, chips, seed: int = 0, config: str = "nominal", wafer: int = 0) -> MemTestReport:
    """Memory-test ``chips`` through ``handle``; every region of every chip appears once in the report."""
    rng = np.random.default_rng(seed)
    results = []
    for chip in sorted(chips, key=lambda h: h.enum):
        results += test_chip(handle, chip, rng)
    return MemTestReport(results, seed, config, wafer)


def update_availability(db, report: MemTestReport):
    """Merge the flags derived from ``report`` into ``db``; returns the delta."""
    delta = derive_from_memtest(report)
    db.update(delta)
    return delta


__all__ = ["run_memtest", "test_chip", "chip_plan", "update_availability"]
