import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waferkit import availability as A
from waferkit import config as cfg
from waferkit import coord as C
from waferkit import hal

H5 = C.HICANNOnWafer(C.Enum(5))
H7 = C.HICANNOnWafer(C.Enum(7))
S123 = C.SynapseOnHICANN.from_enum(123)


def populated(chips=(H5,)):
    w = cfg.WaferConfig(33)
    for h in chips:
        chip = w[h]
        chip.synapses[S123].weight = 3
        chip.neurons[C.NeuronOnHICANN(C.Enum(1))] = hal.NeuronAnalogConfig(e_leak=300, v_thresh=500)
        chip.drivers[C.SynapseDriverOnHICANN(C.Enum(0))] = hal.SynapseDriverConfig(True, 2)
        chip.crossbar = hal.CrossbarSwitchSet(frozenset({(1, 2)}))
        chip.merger = hal.MergerConfig(frozenset({0}), (hal.NeuronOutput(1, 3, 5, True),))
    return w


def test_proxy_marks_dirty_once():
    w = cfg.WaferConfig(33)
    w[H5].synapses[S123].weight = 3
    w[H5].synapses[S123].weight = 3
    row = C.SynapseRowOnWafer(C.SynapseRowOnHICANN(0, 0), H5)
    assert w.dirty == {(row, "synapses")}
    assert w[H5] is w[H5]
    assert w[H5].synapses[S123].weight == 3


def test_unavailable_access():
    w = cfg.WaferConfig(0, A.AvailabilityDb(0).disable(H7))
    with pytest.raises(hal.Unavailable):
        w[H7]
    w2 = cfg.WaferConfig(0, A.AvailabilityDb(0).disable(C.NeuronOnWafer(C.NeuronOnHICANN(C.Enum(3)), H5)))
    with pytest.raises(hal.Unavailable):
        w2[H5].neurons[C.NeuronOnHICANN(C.Enum(3))] = hal.NeuronAnalogConfig(e_leak=1)


def test_full_plan_populates_all_stages():
    plan = cfg.build_plan(populated(), cfg.Full)
    assert plan.populated() == list(cfg.STAGES)
    assert plan.stage("synapses").count == 114688


def test_empty_differential():
    w = populated()
    h = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), h)
    assert w.dirty == set()
    assert cfg.build_plan(w, cfg.Differential).is_empty()


def test_differential_requires_full_first():
    with pytest.raises(cfg.ValidationFailed):
        cfg.build_plan(populated(), cfg.Differential)


def test_single_synapse_differential():
    w = populated([H5, H7])
    dev = hal.DumpHandle()
    full = cfg.apply(cfg.build_plan(w, cfg.Full), dev)
    w[H5].synapses[C.SynapseOnHICANN(1, 100, 9)].weight = 11
    plan = cfg.build_plan(w, cfg.Differential)
    assert plan.populated() == ["synapses"]
    diff = cfg.apply(plan, dev)
    assert diff.writes < 0.01 * full.writes
    fresh = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), fresh)
    assert hal.image_bytes(dev.image()) == hal.image_bytes(fresh.image())


def test_analog_change_forces_trigger():
    w = populated()
    dev = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), dev)
    w[H5].neurons[C.NeuronOnHICANN(C.Enum(9))] = hal.NeuronAnalogConfig(e_leak=1)
    assert cfg.build_plan(w, cfg.Differential).populated() == ["analog", "trigger"]


def test_full_apply_then_read_back_equals_state():
    w = populated([H5, H7])
    w.set_trigger(H5.to_fpga(), hal.TriggerConfig(True))
    dev = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), dev)
    assert cfg.equal_state(cfg.read_back(w, dev), w)


def test_stage_order_and_barrier():
    w = populated([H5, C.HICANNOnWafer(C.Enum(200))])
    handles = {f.enum: hal.DumpHandle() for f in w.fpgas()}
    report = cfg.apply(cfg.build_plan(w, cfg.Full), handles)
    stages = [s for s, _ in report.log]
    assert stages == sorted(stages, key=cfg.STAGES.index)
    assert report.waited == pytest.approx(8e-3)


def test_missing_handle():
    w = populated()
    with pytest.raises(KeyError):
        cfg.apply(cfg.build_plan(w, cfg.Full), {})


class FailingHandle(hal.DumpHandle):
    def _write(self, a, w):
        raise hal.TransportError("link lost")


def test_transport_error_keeps_dirty():
    w = populated()
    with pytest.raises(hal.TransportError):
        cfg.apply(cfg.build_plan(w, cfg.Full), FailingHandle())
    assert w.dirty and w.needs_full


def test_validation_rechecks_availability():
    db = A.AvailabilityDb(0)
    w = cfg.WaferConfig(0, db)
    w[H5].synapses[S123].weight = 3
    db.disable(C.SynapseRowOnWafer(C.SynapseRowOnHICANN(0, 0), H5))
    with pytest.raises(cfg.ValidationFailed) as err:
        cfg.build_plan(w, cfg.Full)
    assert "H005" in err.value.problems[0]


def test_dump_roundtrip():
    w = populated([H5, H7])
    data = cfg.dump(w)
    back = cfg.load_dump(data)
    assert cfg.equal_state(back, w)
    assert cfg.dump(back) == data
    with pytest.raises(cfg.DumpFormatError):
        cfg.load_dump(b"XXXX" + data[4:])


edits = st.lists(st.tuples(st.integers(0, 447), st.integers(0, 255), st.integers(0, 15)), min_size=1, max_size=8)


@settings(max_examples=15, deadline=None)
@given(edits, st.integers(0, 511), st.integers(0, 1023))
def test_differential_equivalence(edits, neuron, code):
    w = populated()
    dev = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), dev)
    for row, col, weight in edits:
        w[H5].set_synapse(row, col, weight=weight)
    w[H5].neurons[C.NeuronOnHICANN.from_enum(neuron)] = hal.NeuronAnalogConfig(v_reset=code)
    cfg.apply(cfg.build_plan(w, cfg.Differential), dev)
    fresh = hal.DumpHandle()
    cfg.apply(cfg.build_plan(w, cfg.Full), fresh)
    assert dev.image() == fresh.image()
