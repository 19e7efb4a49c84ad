import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waferkit import calib
from waferkit import config as cfg
from waferkit import coord as C
from waferkit import hal
from waferkit.simdevice import (AdExParameters, AdExPopulation, NothingRecorded, ProtocolError, SimulatedWafer,
                                driver_line, driver_lines, line_select_for, playback_address, serve)
from waferkit.transport.client import DeviceClient, RemoteError

H5 = C.HICANNOnWafer(C.Enum(5))
H6 = C.HICANNOnWafer(C.Enum(6))  # east neighbor of H5
F1 = H5.to_fpga()
DRIVER0 = C.SynapseDriverOnHICANN(0, 0)
UNITS = calib.UnitTranslation()


def analog(**bio):
    hw = calib.bio_to_hw(bio, UNITS, w_max=1.0)
    return hal.NeuronAnalogConfig(**{p: calib.to_code(calib.ideal(p).apply(hw[p], calib.Clip))
                                     for p in hal.NEURON_PARAMETERS})


def one_chip(weight=15, decoder=0, record=True, readout=True, neurons=(0,), bio=None):
    """Input line 0 of H5 -> switch (0, V0) -> driver 0 -> row 0 -> neurons in hemisphere 0."""
    w = cfg.WaferConfig(33)
    chip = w[H5]
    for n in neurons:
        chip.neurons[C.NeuronOnHICANN(n, 0)] = analog(**(bio or {}))
        chip.set_synapse(0, n, weight=weight, decoder=decoder)
    chip.crossbar = hal.CrossbarSwitchSet(frozenset({(0, 0)}))
    chip.drivers[DRIVER0] = hal.SynapseDriverConfig(True, line_select_for(DRIVER0, 0),
                                                    (hal.RowConfig(0, 0), hal.RowConfig(0, 0)))
    chip.merger = hal.MergerConfig(frozenset({0}),
                                   tuple(hal.NeuronOutput(n, 1, n % 64, record) for n in neurons))
    chip.readout = hal.ReadoutConfig(readout, neurons[0])
    w.set_trigger(F1, hal.TriggerConfig(True))
    return w


def device_with(config, **kwargs):
    dev = SimulatedWafer(33, **kwargs)
    cfg.apply(cfg.build_plan(config), hal.DeviceHandle(dev))
    return dev


def stimulus(dev, ticks, address=0, line=0):
    cir = H5.index_in_reticle
    dev.upload_playback(F1.enum, ticks, [playback_address(cir, line, address)] * len(ticks))


# ------------------------------------------------------------- registers

def test_write_then_read():
    dev = SimulatedWafer()
    a = hal.address(3, "synapse", 77)
    dev.write_batch([a], [0x5A])
    assert dev.read_batch([a]).tolist() == [0x5A]


def test_stuck_at_fault_wins():
    dev = SimulatedWafer()
    a = hal.address(3, "synapse", 77)
    dev.set_fault(a, 0x11)
    dev.write_batch([a], [0x5A])
    assert dev.read_batch([a]).tolist() == [0x11]
    dev.clear_faults()
    dev.write_batch([a], [0x5A])
    assert dev.read_batch([a]).tolist() == [0x5A]


def test_reset_strobe_clears_chip_but_not_fpga():
    dev = SimulatedWafer()
    a = hal.address(3, "driver", 1)
    t = hal.address(3, "fpga", 0)
    dev.write_batch([a, t], [1, 1])
    dev.write_batch([hal.address(3, "control", hal.RESET_OFFSET)], [1])
    assert dev.read_batch([a, t]).tolist() == [0, 1]


def test_bad_addresses_rejected():
    dev = SimulatedWafer()
    with pytest.raises(Exception):
        dev.write_batch([hal.address(3, "readout", 5)], [1])
    with pytest.raises(Exception):
        dev.write_batch([hal.address(100, "fpga", 0)], [1])


def test_codec_coherence_end_to_end():
    w = one_chip()
    dev = device_with(w)
    back = cfg.read_back(w, hal.DeviceHandle(dev))
    assert cfg.equal_state(w, back)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, C.N_SYNAPSES - 1), st.integers(0, 255)), min_size=1, max_size=40))
def test_device_matches_dump_handle(writes):
    dev, dump = SimulatedWafer(), hal.DumpHandle()
    addrs = [hal.address(9, "synapse", off) for off, _ in writes]
    words = [w for _, w in writes]
    hal.DeviceHandle(dev).write_batch(addrs, words)
    dump.write_batch(addrs, words)
    assert dev.image() == {a: w for a, w in dump.image().items() if w}


# ----------------------------------------------------------- integrator

def lif_rate(i, g, c, e_l, v_th, v_reset, t_ref):
    tau = c / g
    v_inf = e_l + i / g
    if v_inf <= v_th:
        return 0.0
    return 1.0 / (t_ref + tau * math.log((v_inf - v_reset) / (v_inf - v_th)))


def lif_population(n, t_ref, dt):
    c, g = 2e-12, 2e-6
    p = AdExParameters(e_leak=0.55, v_exp=1.8, v_thresh=0.8, v_reset=0.5, g_leak=g, a=0, b=0, delta_t=0,
                       tau_w=0, tau_ref=t_ref, tau_syn=1e-7, i_gmax=0, c_mem=c)
    return AdExPopulation(AdExParameters(*[np.repeat(getattr(p, f), n) for f in p.FIELDS], c_mem=c), dt)


@pytest.mark.parametrize("current", [0.6e-6, 0.8e-6, 1.2e-6])
def test_lif_rate_matches_closed_form(current):
    c, g = 2e-12, 2e-6
    dt = 0.01 * c / g
    pop = lif_population(1, 0.2e-6, dt)
    ticks = []
    for t in range(30000):
        fired, _ = pop.step(current)
        if len(fired):
            ticks.append(t)
    rate = 1.0 / (np.diff(ticks).mean() * dt)
    assert rate == pytest.approx(lif_rate(current, g, c, 0.55, 0.8, 0.5, 0.2e-6), rel=0.02)


def test_fixed_point_without_input():
    pop = lif_population(3, 0.0, 1e-8)
    for _ in range(1000):
        fired, _ = pop.step()
        assert not len(fired)
    assert np.allclose(pop.v, 0.55)


def test_refractory_period_respected():
    dt = 1e-8
    pop = lif_population(1, 0.3e-6, dt)
    ticks = [t for t in range(20000) if len(pop.step(5e-6)[0])]
    assert len(ticks) > 10
    assert np.diff(ticks).min() * dt >= 0.3e-6


def test_halving_dt_converges():
    times = []
    for dt in (2e-9, 1e-9, 0.5e-9):
        pop = lif_population(1, 0.0, dt)
        t = 0
        while not len(pop.step(0.7e-6)[0]):
            t += 1
        times.append(t * dt)
    assert abs(times[1] - times[2]) < abs(times[0] - times[1]) + 1e-12
    assert abs(times[1] - times[2]) < 1e-9


def test_exponential_term_clamped():
    p = AdExParameters(e_leak=0.55, v_exp=0.6, v_thresh=1.79, v_reset=0.55, g_leak=2e-6, a=1e-7, b=1e-8,
                       delta_t=0.001, tau_w=1e-5, tau_ref=0, tau_syn=1e-7, i_gmax=0)
    pop = AdExPopulation(p, 1e-8)
    for _ in range(2000):
        pop.step(1e-6)
        assert np.all(np.isfinite(pop.v)) and 0 <= pop.v[0] <= 1.8
    assert pop.w[0] > 0


def test_driver_line_candidates():
    assert driver_lines(0) == [0, 16, 32, 48, 64, 80, 96, 112, 128, 144, 160, 176, 192, 208, 224, 240]
    d = C.SynapseDriverOnHICANN(1, 17)
    assert all((v % 128) % 16 == 1 for v in driver_lines(17))
    assert driver_line(d, line_select_for(d, 129)) == 129
    assert line_select_for(d, 0) is None


# ------------------------------------------------------------------- runs

def test_matching_decoder_injects_current():
    dev = device_with(one_chip())
    stimulus(dev, [100])
    counters = dev.run(300)
    assert counters["delivered"] == 1
    trace = dev.readout()["traces"][0]["v"]
    assert max(trace[11:]) > trace[5] + 1e-3  # depolarized after the event (sampled every 10 ticks)


def test_mismatched_decoder_no_injection():
    quiet = device_with(one_chip(decoder=3))
    quiet.run(300)
    dev = device_with(one_chip(decoder=3))
    stimulus(dev, [100], address=0)
    assert dev.run(300)["delivered"] == 1  # reached the driver, filtered at the synapses
    assert dev.readout()["traces"] == quiet.readout()["traces"]


def test_hop_delay_through_repeater():
    # H5 input line 0 -> repeater east -> H6 line 0 -> switch (0, 0) -> driver 0 of H6
    w = one_chip()
    w[H5].crossbar = hal.CrossbarSwitchSet()
    w[H5].drivers[DRIVER0] = hal.SynapseDriverConfig()
    w[H5].repeater = hal.RepeaterConfig(east=frozenset({0}))
    chip = w[H6]
    chip.neurons[C.NeuronOnHICANN(0, 0)] = analog()
    chip.set_synapse(0, 0, weight=15, decoder=0)
    chip.crossbar = hal.CrossbarSwitchSet(frozenset({(0, 0)}))
    chip.drivers[DRIVER0] = hal.SynapseDriverConfig(True, 0)
    dev = device_with(w)
    reach = dev.fabric().reach(H5.enum, 0)
    assert reach[(H6.enum, 0)] == 2  # one repeater plus one switch
    assert reach[(H5.enum, 0)] == 1 if (H5.enum, 0) in reach else True
    _, targets = dev.fabric().targets(H5.enum, 0, 0, dev.synapses)
    assert [(t, c, n) for t, c, n, _, _ in targets] == [(2, H6.enum, 0)]


def test_run_before_arm_is_protocol_error():
    w = one_chip()
    w.set_trigger(F1, hal.TriggerConfig(False))
    dev = device_with(w)
    stimulus(dev, [10])
    with pytest.raises(ProtocolError):
        dev.run(100)


def test_bandwidth_limit_drops_excess():
    dev = device_with(one_chip())
    stimulus(dev, [50] * 20)
    counters = dev.run(100, bandwidth_limit=10)
    assert counters["delivered"] == 10 and counters["dropped_bandwidth"] == 10
    assert counters["delivered"] + counters["dropped"] + counters["unroutable"] == counters["injected"]


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 400), st.integers(0, 63), st.integers(0, 3)), max_size=60),
       st.integers(0, 5), st.one_of(st.none(), st.integers(0, 3)))
def test_event_conservation(events, jitter, limit):
    dev = device_with(one_chip())
    cir = H5.index_in_reticle
    dev.upload_playback(F1.enum, [e[0] for e in events], [playback_address(cir, e[2], e[1]) for e in events])
    c = dev.run(300, jitter=jitter, bandwidth_limit=limit, seed=1)
    assert c["delivered"] + c["dropped"] + c["unroutable"] == c["injected"] == len(events)


def test_nothing_recorded():
    dev = device_with(one_chip(record=False, readout=False))
    stimulus(dev, [10])
    dev.run(50)
    with pytest.raises(NothingRecorded):
        dev.readout()


def test_trace_length():
    dev = device_with(one_chip())
    dev.run(1000, sample_interval=7)
    assert abs(len(dev.readout()["traces"][0]["v"]) - 1000 / 7) <= 1


def test_suprathreshold_input_spikes_and_determinism():
    w = one_chip(neurons=(0, 1))
    runs = []
    for _ in range(2):
        dev = device_with(w, mismatch=0.02, seed=4)
        stimulus(dev, list(range(20, 2000, 20)))
        dev.run(3000, jitter=3, seed=9)
        runs.append(dev.readout())
    assert runs[0] == runs[1]
    spiking = {s[2] for s in runs[0]["spikes"]}
    assert spiking == {0, 1}
    for n in (0, 1):
        ticks = [s[0] for s in runs[0]["spikes"] if s[2] == n]
        assert min(np.diff(ticks)) * 1e-8 >= calib.code_to_value("tau_ref", analog().tau_ref) * 0.9


def test_quantized_threshold_shift_bounded():
    """One DAC step of threshold moves the first spike by a bounded amount."""
    c, g, dt, i = 2e-12, 2e-6, 1e-9, 0.7e-6
    step = 1.8 / 1023

    def first_spike(th):
        p = AdExParameters(e_leak=0.55, v_exp=1.8, v_thresh=th, v_reset=0.55, g_leak=g, a=0, b=0, delta_t=0,
                           tau_w=0, tau_ref=0, tau_syn=1e-7, i_gmax=0, c_mem=c)
        pop = AdExPopulation(p, dt)
        t = 0
        while not len(pop.step(i)[0]):
            t += 1
        return t * dt

    th = 0.8
    quantized = round(th / step) * step
    v_inf = 0.55 + i / g
    slope = (v_inf - th) * g / c  # dV/dt at threshold
    bound = step / slope + 2 * dt
    assert abs(first_spike(th) - first_spike(quantized)) <= bound


def test_measure_threshold_tracks_code():
    dev = SimulatedWafer(mismatch=0.03, seed=2)
    n = C.NeuronOnWafer(C.NeuronOnHICANN(C.Enum(7)), H5)
    lo = dev.measure(n, "v_thresh", 300)
    hi = dev.measure(n, "v_thresh", 600)
    assert 0 < lo < hi < 1.8
    assert hi == pytest.approx(600 / 1023 * 1.8, rel=0.15)


def test_calibration_against_device_recovers_mismatch():
    dev = SimulatedWafer(mismatch=0.05, seed=3)
    n = C.NeuronOnWafer(C.NeuronOnHICANN(C.Enum(11)), H5)
    db = calib.CalibrationDb()
    t = calib.calibrate(dev, n, "g_leak", range(100, 1000, 100), db=db)
    code = calib.to_code(t.apply(2e-6))
    assert dev.measure(n, "g_leak", code) == pytest.approx(2e-6, rel=2e-3)


# ------------------------------------------------------------------ serving

def test_serve_over_transport():
    dev = SimulatedWafer(33)
    server = serve(dev)
    try:
        with DeviceClient.connect(*server.address) as client:
            handle = hal.RemoteHandle(client)
            w = one_chip()
            cfg.apply(cfg.build_plan(w), handle)
            assert dev.image() == device_with(w).image()
            client.upload_playback(F1.enum, [10, 20], [playback_address(H5.index_in_reticle, 0, 0)] * 2)
            assert client.control("run", duration=100)["counters"]["delivered"] == 2
            assert client.readout()["traces"][0]["neuron"] == 0
            client.control("clear_playback")
            w.set_trigger(F1, hal.TriggerConfig(False))
            cfg.apply(cfg.build_plan(w, cfg.Differential), handle)
            with pytest.raises(RemoteError, match="trigger"):
                client.control("run", duration=100)
    finally:
        server.stop()
