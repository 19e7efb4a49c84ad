"""One test per acceptance criterion, at the stated tolerances and runtime limits."""
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import test_maproute
import test_simdevice
import test_transport
from strategies import random_container, random_coord
from waferkit import calib, cli, hal, memtest, runner
from waferkit import config as cfg
from waferkit import coord as C
from waferkit import maproute as M
from waferkit.availability import AvailabilityDb
from waferkit.simdevice import SimulatedWafer
from waferkit.transport.arq import ArqEndpoint
from waferkit.transport.harness import LossyLinkSpec, transfer


def test_ac01_calibration_listing(criterion):
    with criterion(1, "calibration listing", 1.0):
        t = calib.Transformation((0.0, 1023 / 1.8), (0.0, 1.8))
        assert t.apply(0.9) == 511.5
        assert abs(t.reverse_apply(256) - 0.450) <= 1e-6
        assert t.apply(2.0, calib.Clip) == 1023


def test_ac02_cardinalities(criterion):
    with criterion(2, "cardinalities and synapse footprint", 1.0):
        assert len(C.enumerate_kind(C.HICANNOnWafer)) == 384
        assert len(C.enumerate_kind(C.NeuronOnHICANN)) == 512
        assert len(C.enumerate_kind(C.SynapseOnHICANN)) == 114688
        assert len(C.enumerate_kind(C.FPGAOnWafer)) == 48
        footprint = 384 * 114688
        assert hal.SYNAPSE_BYTES_PER_WAFER == footprint
        assert abs(footprint / 2**20 - 41) / 41 <= 0.05


@settings(max_examples=500, deadline=None)
@given(st.integers(0, C.Wafer.size - 1), st.integers(0, C.N_HICANN - 1), st.integers(0, C.N_NEURONS - 1))
def neuron_global_roundtrip(w, h, n):
    c = C.NeuronGlobal(C.NeuronOnWafer(C.NeuronOnHICANN.from_enum(n), C.HICANNOnWafer.from_enum(h)), C.Wafer(w))
    assert C.parse_short(C.format_short(c)) == c


def test_ac03_short_format(criterion):
    with criterion(3, "short format", 5.0):
        assert C.format_short(C.HICANNGlobal(C.HICANNOnWafer(C.Enum(5)), C.Wafer(6))) == "W006H005"
        assert C.parse_short("W3") == C.Wafer(3)
        # exhaustive where the kind is small enough, sampled for wafer-global neurons
        for kind in C.SHORT_FORMAT_KINDS:
            if kind is C.NeuronGlobal:
                continue
            for c in kind.iter_all():
                assert C.parse_short(C.format_short(c)) == c, c
        neuron_global_roundtrip()


def test_ac04_availability_hierarchy(criterion, tmp_path, monkeypatch, capsys):
    with criterion(4, "availability hierarchy and CLI", 1.0):
        h5 = C.HICANNOnWafer(C.Enum(5))
        db = AvailabilityDb(0).disable(h5)
        assert sum(not db.is_usable(C.NeuronOnWafer(n, h5)) for n in C.NeuronOnHICANN.iter_all()) == 512
        monkeypatch.chdir(tmp_path)
        assert cli.main(["blacklist", ".", "W33H0", "has", "neuron", "0"]) == 0
        assert cli.main(["blacklist", ".", "W33H0", "disable", "neuron", "1"]) == 0
        assert cli.main(["blacklist", ".", "W33H0", "has", "neuron", "1"]) == 0
        assert cli.main(["blacklist", ".", "W33H0", "has", "neuron", "0"]) == 0
        assert capsys.readouterr().out.splitlines() == ["True", "False", "True"]


def test_ac05_transport_under_loss(criterion):
    with criterion(5, "transport under loss", 120.0):
        data = random.Random(1).randbytes(4 << 20)
        r = transfer(data, LossyLinkSpec(drop=0.10, reorder=0.05, seed=7))
        assert r.received == data and len(r.messages) == 1
        for seed in range(10_000):
            payload = random.Random(~seed).randbytes(64 << 10)
            assert transfer(payload, test_transport.fuzz_spec(seed)).received == payload, seed
        ep = ArqEndpoint()
        ep.srtt, ep.rttvar = 0.100, 0.010
        assert ep.compute_rto() == pytest.approx(0.100 + 4 * 0.010)
        test_transport.test_slow_start_doubles_per_rtt()


def test_ac06_codec(criterion):
    with criterion(6, "codec round trip", 30.0):
        rng = random.Random(6)
        for kind in hal.CONTAINERS:
            for _ in range(10_000):
                container = random_container(kind, rng)
                coord = random_coord(kind, rng)
                words = [w.word for w in hal.encode(container, coord)]
                assert hal.decode(kind, coord, words) == container


def test_ac07_routing_oracle(criterion):
    with criterion(7, "routing oracle", 60.0):
        found = missing = 0
        for seed in range(100):
            # routing_case also checks max_switches and line capacity 1 on every route
            for want, got in test_maproute.routing_case(seed):
                assert want == got, f"case {seed}"
                found += got is not None
                missing += got is None
        assert found and missing


def test_ac08_differential_configuration(criterion):
    with criterion(8, "differential configuration", 10.0):
        mapping, config = runner.compile(runner.Experiment(M.minimal_example(), runtime=0.1))
        dev = SimulatedWafer()
        handle = hal.DeviceHandle(dev)
        full = cfg.apply(cfg.build_plan(config, cfg.Full), handle)
        s = next(iter(mapping.synapses.values())).synapse
        config[s.outer].set_synapse(s.inner.hemisphere * C.N_ROWS_PER_HEMISPHERE + s.inner.row, s.inner.column,
                                    weight=9)
        diff = cfg.apply(cfg.build_plan(config, cfg.Differential), handle)
        assert diff.writes < 0.01 * full.writes
        fresh = SimulatedWafer()
        cfg.apply(cfg.build_plan(config, cfg.Full), hal.DeviceHandle(fresh))
        assert hal.image_bytes(dev.image()) == hal.image_bytes(fresh.image())


def test_ac09_minimal_experiment(criterion):
    with criterion(9, "minimal experiment end to end", 10.0):
        exp = runner.Experiment(M.minimal_example(chip="H5", weight=0.2), runtime=0.1)
        mapping, config, result = runner.run(exp, hal.DeviceHandle(SimulatedWafer()))
        assert {s.weight for s in mapping.synapses.values()} == {3}
        assert sorted(result.spikes["neurons"]) == [0, 1]
        assert all(len(t) >= 1 for t in result.spikes["neurons"].values())
        (trace,) = result.traces
        assert len(trace["v_mV"]) > 0 and len(trace["time_ms"]) == len(trace["v_mV"])
        # biological units: millivolts around the resting potential, milliseconds within the runtime
        assert -80 < np.mean(trace["v_mV"]) < -30
        assert 0 <= trace["time_ms"][0] and trace["time_ms"][-1] <= 100.0


def test_ac10_memtest_closure(criterion):
    with criterion(10, "memtest to blacklist closure", 30.0):
        exp = runner.Experiment(M.minimal_example(), runtime=0.1)
        mapping, _ = runner.compile(exp)
        used = next(iter(mapping.synapses.values())).synapse
        row = C.SynapseRowOnWafer(C.translate(used.inner, C.SynapseRowOnHICANN), used.outer)
        dev = SimulatedWafer()
        word = hal.synapse_row_addresses(row.outer.enum, np.array([row.inner.enum]))[0][used.inner.column]
        dev.set_fault(int(word), 0)  # stuck at zero
        handle = hal.DeviceHandle(dev)
        report = memtest.run_memtest(handle, [row.outer], seed=10)
        db = AvailabilityDb(0)
        delta = memtest.update_availability(db, report)
        assert delta.flags() == [row]
        exp.availability = db
        mapping2, config2, result = runner.run(exp, handle)
        rows = {C.SynapseRowOnWafer(C.translate(s.synapse.inner, C.SynapseRowOnHICANN), s.synapse.outer)
                for s in mapping2.synapses.values()}
        assert row not in rows and mapping2.loss_report()["lost"] == 0
        assert all(len(t) >= 1 for t in result.spikes["neurons"].values())


def test_ac11_neuron_integrator(criterion):
    with criterion(11, "neuron integrator", 30.0):
        c, g, t_ref = 2e-12, 2e-6, 0.2e-6
        dt = 0.01 * c / g
        for current in (0.6e-6, 0.8e-6, 1.2e-6):
            runs = []
            for _ in range(2):
                pop = test_simdevice.lif_population(1, t_ref, dt)
                ticks, trace = [], []
                for t in range(30000):
                    fired, v = pop.step(current)
                    trace.append(v[0])
                    if len(fired):
                        ticks.append(t)
                runs.append((ticks, np.array(trace)))
            ticks = runs[0][0]
            rate = 1.0 / (np.diff(ticks).mean() * dt)
            want = test_simdevice.lif_rate(current, g, c, 0.55, 0.8, 0.5, t_ref)
            assert abs(rate - want) / want <= 0.02, (current, rate, want)
            assert np.diff(ticks).min() * dt >= t_ref
            assert runs[0][0] == runs[1][0] and runs[0][1].tobytes() == runs[1][1].tobytes()
