import numpy as np
import pytest

from waferkit import coord as C
from waferkit import hal, memtest
from waferkit.availability import AvailabilityDb, MemoryRegion, regions_of
from waferkit.simdevice import SimulatedWafer

H5 = C.HICANNOnWafer(C.Enum(5))
H6 = C.HICANNOnWafer(C.Enum(6))


def device():
    dev = SimulatedWafer()
    return dev, hal.DeviceHandle(dev)


def region_words(region):
    regions, addrs, masks, owner = memtest.chip_plan(C.HICANNOnWafer.from_enum(region.hicann))
    k = regions.index(region)
    return addrs[owner == k], masks[owner == k]


def test_plan_covers_every_region():
    regions, addrs, masks, owner = memtest.chip_plan(H5)
    assert regions == regions_of(H5)
    assert set(owner.tolist()) == set(range(len(regions)))
    assert np.all(masks != 0)
    # every address lies on the tested chip
    assert {hal.split_address(a)[0] for a in addrs.tolist()} == {5}


def test_region_word_counts():
    assert len(region_words(MemoryRegion(5, "synapse_row", 3))[0]) == C.N_COLUMNS
    assert len(region_words(MemoryRegion(5, "synapse_driver", 3))[0]) == 1
    assert len(region_words(MemoryRegion(5, "neuron", 3))[0]) == len(hal.NEURON_PARAMETERS)
    # horizontal line: crossbar words holding its 8 switches, its repeater and merger bits
    a, m = region_words(MemoryRegion(5, "bus_line", 7))
    regions = [hal.split_address(x)[1] for x in a.tolist()]
    assert sum(bin(y).count("1") for r, y in zip(regions, m.tolist()) if r == hal.REGION["crossbar"]) == 8
    assert regions.count(hal.REGION["repeater"]) == 1 and regions.count(hal.REGION["merger"]) == 1


def test_clean_chip_passes():
    dev, h = device()
    report = memtest.run_memtest(h, [H5], seed=3)
    assert report.failures == []
    assert len(report.results) == len(regions_of(H5))
    assert dev.image() == {}  # chip reset after the test


@pytest.mark.parametrize("region", [MemoryRegion(5, "synapse_row", 17), MemoryRegion(5, "synapse_driver", 200),
                                    MemoryRegion(5, "neuron", 511), MemoryRegion(5, "bus_line", 40),
                                    MemoryRegion(5, "bus_line", 64 + 130)])
def test_stuck_word_flags_exactly_its_region(region):
    dev, h = device()
    a, m = region_words(region)
    # stick a word that no other region shares bits of, when one exists
    dev.set_fault(int(a[-1]), 0)
    report = memtest.run_memtest(h, [H5], seed=1)
    failed = report.failures
    assert region in failed
    for r in failed:
        ra, rm = region_words(r)
        assert int(a[-1]) in ra.tolist()


def test_untested_registers_do_not_fail():
    dev, h = device()
    a, _ = region_words(MemoryRegion(5, "synapse_row", 0))
    dev.set_fault(int(a[0]), 0)
    report = memtest.run_memtest(h, [H5])
    assert report.failures == [MemoryRegion(5, "synapse_row", 0)]
    # the clock register belongs to no memory region
    dev2, h2 = device()
    dev2.set_fault(hal.address(5, "control", hal.CLOCK_OFFSET), 0)
    assert memtest.run_memtest(h2, [H5]).failures == []


def test_only_tested_chips_reported():
    dev, h = device()
    report = memtest.run_memtest(h, [H6, H5])
    assert sorted({r.hicann for r, _ in report.results}) == [5, 6]


def test_update_availability_merges():
    dev, h = device()
    a, _ = region_words(MemoryRegion(5, "synapse_row", 2))
    dev.set_fault(int(a[5]), 0xFF)
    db = AvailabilityDb(0)
    delta = memtest.update_availability(db, memtest.run_memtest(h, [H5]))
    row = C.SynapseRowOnWafer(C.SynapseRowOnHICANN.from_enum(2), H5)
    assert delta.flags() == [row]
    assert not db.is_usable(row)
    assert db.is_usable(C.SynapseRowOnWafer(C.SynapseRowOnHICANN.from_enum(3), H5))


def test_deterministic_for_seed():
    _, h1 = device()
    _, h2 = device()
    assert memtest.run_memtest(h1, [H5], seed=9).to_dict() == memtest.run_memtest(h2, [H5], seed=9).to_dict()
