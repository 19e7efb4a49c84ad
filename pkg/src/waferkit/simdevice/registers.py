"""Raw register storage of the simulated wafer, with stuck-at faults."""
from __future__ import annotations

import numpy as np

from .. import coord as C
from .. import hal

_SHIFT = hal.OFFSET_BITS
_OFFSET_MASK = (1 << hal.OFFSET_BITS) - 1

# number of words per (chip, region) block
REGION_SIZE = {
    hal.REGION["control"]: max(hal.RESET_OFFSET, hal.CLOCK_OFFSET) + 1,
    hal.REGION["neuron"]: C.N_NEURONS * hal.NEURON_STRIDE,
    hal.REGION["synapse"]: C.N_SYNAPSES,
    hal.REGION["driver"]: C.N_DRIVERS,
    hal.REGION["crossbar"]: C.N_HLINES * hal.XBAR_WORDS,
    hal.REGION["repeater"]: max(hal.REP_H + C.N_HLINES // 32, hal.REP_V + C.N_VLINES // 32),
    hal.REGION["merger"]: max(hal.MERGER_IN + C.N_HLINES // 32, hal.MERGER_OUT + C.N_NEURONS),
    hal.REGION["readout"]: 1,
    hal.REGION["fpga"]: 1,
}
FPGA_REGION = hal.REGION["fpga"]


class AddressError(ValueError):
    pass


class RegisterFile:
    """Words of every (chip, region) block; unwritten words read as zero.

    A stuck-at fault pins an address to a value: writes are accepted but
    the stored word, and therefore every read and the device behavior,
    keeps the stuck value.
    """

    def __init__(self):
        self.blocks: dict[tuple[int, int], np.ndarray] = {}
        self.faults: dict[int, int] = {}
        self.version = 0  # bumped on every change; lets caches detect staleness

    def _check_block(self, chip: int, region: int) -> None:
        size = REGION_SIZE.get(region)
        if size is None:
            raise AddressError(f"region {region} is not in the register map")
        limit = C.N_FPGA if region == FPGA_REGION else C.N_HICANN
        if chip >= limit:
            raise AddressError(f"chip field {chip} out of range for region {region}")

    def block(self, chip: int, region: int, create: bool = False):
        key = (chip, region)
        arr = self.blocks.get(key)
        if arr is None and create:
            self._check_block(chip, region)
            arr = self.blocks[key] = np.zeros(REGION_SIZE[region], dtype=np.uint32)
        return arr

    @staticmethod
    def _groups(addresses: np.ndarray):
        keys = addresses >> _SHIFT
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        bounds = np.flatnonzero(np.diff(sorted_keys)) + 1
        for idx in np.split(order, bounds):
            if len(idx):
                key = int(keys[idx[0]])
                yield key >> hal.REGION_BITS, key & ((1 << hal.REGION_BITS) - 1), idx

    def validate(self, addresses: np.ndarray) -> None:
        for chip, region, idx in self._groups(addresses):
            self._check_block(chip, region)
            if int((addresses[idx] & _OFFSET_MASK).max()) >= REGION_SIZE[region]:
                raise AddressError(f"offset out of range in chip {chip} region {region}")

    def write(self, addresses, words) -> list[int]:
        """Store words; returns the chips whose reset strobe was written."""
        addresses = np.asarray(addresses, dtype=np.uint32).ravel()
        words = np.asarray(words, dtype=np.uint32).ravel()
        self.validate(addresses)
        resets = []
        for chip, region, idx in self._groups(addresses):
            offsets = (addresses[idx] & _OFFSET_MASK).astype(np.int64)
            values = words[idx]
            if region == hal.REGION["control"]:
                strobe = offsets == hal.RESET_OFFSET
                for k in np.flatnonzero(strobe):
                    if values[k] & 1:
                        self.reset_chip(chip)
                        resets.append(chip)
                offsets, values = offsets[~strobe], values[~strobe]
                if not len(offsets):
                    continue
            self.block(chip, region, create=True)[offsets] = values  # later duplicates win
        self._apply_faults()
        self.version += 1
        return resets

    def read(self, addresses) -> np.ndarray:
        addresses = np.asarray(addresses, dtype=np.uint32).ravel()
        self.validate(addresses)
        out = np.zeros(len(addresses), dtype=np.uint32)
        for chip, region, idx in self._groups(addresses):
            arr = self.block(chip, region)
            if arr is not None:
                out[idx] = arr[(addresses[idx] & _OFFSET_MASK).astype(np.int64)]
        if self.faults:
            for i, a in enumerate(addresses.tolist()):
                if a in self.faults:
                    out[i] = self.faults[a]
        return out

    def reset_chip(self, chip: int) -> None:
        for key in [k for k in self.blocks if k[0] == chip and k[1] != FPGA_REGION]:
            del self.blocks[key]
        self._apply_faults()
        self.version += 1

    def clear(self) -> None:
        self.blocks.clear()
        self._apply_faults()
        self.version += 1

    def set_fault(self, address: int, value: int) -> None:
        address, value = int(address), int(value)
        if not 0 <= value <= hal.WORD_MASK:
            raise ValueError("stuck value must be a 32-bit word")
        self.validate(np.array([address], dtype=np.uint32))
        self.faults[address] = value
        self._apply_faults()
        self.version += 1

    def clear_faults(self) -> None:
        self.faults.clear()
        self.version += 1

    def _apply_faults(self) -> None:
        for a, v in self.faults.items():
            chip, region, offset = hal.split_address(a)
            self.block(chip, region, create=True)[offset] = v

    def image(self) -> dict[int, int]:
        """Every non-zero word, keyed by address."""
        out = {}
        for (chip, region), arr in self.blocks.items():
            nz = np.flatnonzero(arr)
            if len(nz):
                base = hal.address(chip, region, 0)
                out.update(zip((base + nz).tolist(), arr[nz].tolist()))
        return out
