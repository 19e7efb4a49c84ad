import os
import random
import socket
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waferkit.transport import commands
from waferkit.transport.arq import ArqEndpoint, ConnectionDead
from waferkit.transport.client import DeviceClient, RemoteError, decode_playback, encode_playback
from waferkit.transport.events import EventPacket, EventReceiver, packetize
from waferkit.transport.frame import (ACK, DATA, HEADER, MAGIC, SEQ_MOD, Frame, MalformedFrame, seq_diff,
                                      seq_lt)
from waferkit.transport.harness import (Harness, LinkDirection, LossyLinkSpec, event_vs_reliable_latency,
                                        transfer)
from waferkit.transport.udp import Connection, Refused, Server, Timeout


# ---------------------------------------------------------------- frames

def test_header_is_12_bytes_big_endian():
    raw = Frame(DATA, seq=1, ack=2, flags=0x83, payload=b"xy").encode()
    assert raw[:12] == bytes([0xB5, 0x01, 0, 0x83, 0, 0, 0, 1, 0, 0, 0, 2])
    f = Frame.decode(raw)
    assert (f.seq, f.ack, f.kind, f.more, f.payload) == (1, 2, 3, True, b"xy")


@pytest.mark.parametrize("bad", [b"", b"\x00" * 11, b"\x00" * 12,
                                 HEADER.pack(MAGIC, 7, 0, 0, 0),
                                 HEADER.pack(MAGIC, ACK, 0, 0, 0) + b"p"])
def test_malformed_frames(bad):
    with pytest.raises(MalformedFrame):
        Frame.decode(bad)


def test_payload_limit():
    with pytest.raises(ValueError):
        Frame(DATA, payload=bytes(1401))


def test_serial_arithmetic():
    assert seq_lt(SEQ_MOD - 1, 0)
    assert not seq_lt(0, SEQ_MOD - 1)
    assert seq_diff(2, SEQ_MOD - 3) == 5


def test_endpoint_counts_malformed():
    ep = ArqEndpoint(established=True)
    ep.on_datagram(b"junk", 0.0)
    ep.on_datagram(HEADER.pack(0x1234, DATA, 0, 0, 0), 0.0)
    assert ep.malformed == 2


# --------------------------------------------------------------- reliability

def test_4mib_under_loss_and_reorder():
    data = random.Random(1).randbytes(4 << 20)
    r = transfer(data, LossyLinkSpec(drop=0.10, reorder=0.05, seed=7))
    assert r.received == data
    assert len(r.messages) == 1
    assert r.retransmissions > 0


def fuzz_spec(seed):
    rng = random.Random(seed)
    return LossyLinkSpec(drop=rng.uniform(0, 0.2), reorder=rng.uniform(0, 0.2),
                         duplicate=rng.uniform(0, 0.1), jitter=rng.uniform(0, 0.01),
                         base_delay=rng.uniform(0.0005, 0.01), seed=seed)


def test_fuzz_subset():
    for seed in range(300):
        data = random.Random(~seed).randbytes(random.Random(seed).randint(1, 64 << 10))
        assert transfer(data, fuzz_spec(seed)).received == data, seed


@settings(max_examples=60, deadline=None)
@given(st.lists(st.binary(min_size=0, max_size=5000), min_size=1, max_size=6),
       st.integers(0, 2**31), st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 0.3),
       st.integers(1, 32))
def test_messages_exactly_once_in_order(messages, seed, drop, reorder, dup, window):
    spec = LossyLinkSpec(drop=drop, reorder=reorder, duplicate=dup, jitter=0.003, seed=seed)
    a = ArqEndpoint(window=window, established=True)
    b = ArqEndpoint(window=window, established=True)
    h = Harness(spec, a, b)
    for i, m in enumerate(messages):
        a.send_message(m, kind=i % 16)
    want = [(i % 16, m) for i, m in enumerate(messages) if m]
    got = []

    def done():
        while (m := b.receive_message()) is not None:
            got.append(m)
        return len(got) >= len(want) and a.idle

    h.run(until=done)
    assert got == want


def test_both_directions_at_once():
    spec = LossyLinkSpec(drop=0.1, reorder=0.1, seed=3)
    a = ArqEndpoint(window=16, established=True)
    b = ArqEndpoint(window=16, established=True)
    da, db = os.urandom(50000), os.urandom(70000)
    a.send_message(da)
    b.send_message(db)
    got = {}

    def done():
        for name, ep in (("a", a), ("b", b)):
            m = ep.receive_message()
            if m:
                got[name] = m[1]
        return len(got) == 2 and a.idle and b.idle

    Harness(spec, a, b).run(until=done)
    assert got == {"a": db, "b": da}


def test_sequence_wraparound():
    a = ArqEndpoint(window=8, established=True)
    b = ArqEndpoint(window=8, established=True)
    start = SEQ_MOD - 5
    a.snd_una = a.snd_nxt = start
    b.rcv_nxt = start
    data = os.urandom(1400 * 20)
    a.send_message(data)
    got = []

    def done():
        m = b.receive_message()
        if m is not None:
            got.append(m)
        return got and a.idle

    Harness(LossyLinkSpec(drop=0.2, reorder=0.2, seed=5), a, b).run(until=done)
    assert got == [(0, data)]
    assert a.snd_nxt == (start + 20) % SEQ_MOD


def test_empty_message_emits_no_data_frame():
    ep = ArqEndpoint(established=True)
    assert ep.send_message(b"") == 0
    assert ep.drive(0.0) == []


def test_total_loss_kills_the_connection():
    with pytest.raises(ConnectionDead):
        transfer(b"x" * 3000, LossyLinkSpec(drop=1.0))


def test_determinism_of_frame_trace():
    data = os.urandom(200000)
    spec = LossyLinkSpec(drop=0.1, reorder=0.1, duplicate=0.05, jitter=0.002, seed=11)
    r1, r2 = transfer(data, spec), transfer(data, spec)
    assert (r1.digest, r1.elapsed, r1.frames) == (r2.digest, r2.elapsed, r2.frames)
    r3 = transfer(data, LossyLinkSpec(drop=0.1, reorder=0.1, duplicate=0.05, jitter=0.002, seed=12))
    assert r3.digest != r1.digest


def test_link_direction_stats_follow_probabilities():
    link = LinkDirection(LossyLinkSpec(drop=0.25, seed=1), 0)
    for _ in range(20000):
        link.transmit(0.0, b"x")
    assert abs(link.dropped / 20000 - 0.25) < 0.015


@pytest.mark.parametrize("field,value", [("drop", -0.1), ("reorder", 1.5), ("duplicate", 2.0)])
def test_spec_rejects_bad_probabilities(field, value):
    with pytest.raises(ValueError):
        LossyLinkSpec(**{field: value})


# ----------------------------------------------------------- timers and window

def test_rto_formula():
    ep = ArqEndpoint()
    ep.srtt, ep.rttvar = 0.100, 0.010
    assert ep.compute_rto() == pytest.approx(0.140)
    ep.srtt, ep.rttvar = 0.001, 0.0
    assert ep.compute_rto() == 0.01  # rto_min
    ep.srtt, ep.rttvar = 1.0, 1.0
    assert ep.compute_rto() == 2.0  # rto_max


def _ack(ep, now, ack):
    ep.on_datagram(HEADER.pack(MAGIC, ACK, 0, 0, ack), now)


def test_rtt_estimator_against_reference():
    samples = [0.05, 0.08, 0.03, 0.2, 0.1, 0.1, 0.06]
    ep = ArqEndpoint(established=True)
    srtt = rttvar = None
    t = 0.0
    for i, s in enumerate(samples):
        ep.send_message(b"p")
        ep.drive(t)
        _ack(ep, t + s, i + 1)
        t += s
        if srtt is None:
            srtt, rttvar = s, s / 2
        else:
            rttvar = 0.75 * rttvar + 0.25 * abs(srtt - s)
            srtt = 0.875 * srtt + 0.125 * s
        assert ep.srtt == pytest.approx(srtt, abs=1e-12)
        assert ep.rttvar == pytest.approx(rttvar, abs=1e-12)
        assert ep.rto == pytest.approx(min(max(srtt + 4 * rttvar, 0.01), 2.0), abs=1e-12)


def test_karn_rule_excludes_retransmitted_frames():
    ep = ArqEndpoint(established=True, rto_initial=0.2)
    ep.send_message(b"p")
    ep.drive(0.0)
    out = ep.drive(0.2)  # timer expires, frame goes out again
    assert len(out) == 1 and ep.retransmissions == 1
    assert ep.inflight[0][4] == pytest.approx(0.4)  # backoff doubled
    _ack(ep, 0.25, 1)
    assert ep.srtt is None and ep.rto == 0.2
    ep.send_message(b"q")
    ep.drive(0.3)
    _ack(ep, 0.35, 2)
    assert ep.srtt == pytest.approx(0.05)


def test_slow_start_doubles_per_rtt():
    delay = 0.005
    rtt = 2 * delay
    window = 64
    a = ArqEndpoint(window=window, established=True)
    b = ArqEndpoint(window=window, established=True)
    a.send_message(bytes(2 << 20))
    h = Harness(LossyLinkSpec(base_delay=delay), a, b)
    history = []
    h.run(until=lambda: h.now > 12 * rtt, observer=lambda hh: history.append((hh.now, a.cwnd)))
    ssthresh = window // 2
    assert a.ssthresh == ssthresh

    def cwnd_at(t):
        return [c for (tt, c) in history if tt <= t][-1]

    for k in range(6):
        assert cwnd_at(k * rtt + delay) == min(2 ** k, ssthresh), k
    # congestion avoidance: about one frame per round trip past ssthresh
    for k in range(6, 12):
        c = cwnd_at(k * rtt + delay)
        assert ssthresh <= c <= ssthresh + (k - 5) + 1e-9


def test_goodput_non_decreasing_in_window():
    spec = LossyLinkSpec(base_delay=0.005, rate=20e6)
    bdp_frames = int(20e6 * 0.01 / 1412) + 1
    data = bytes(1 << 20)
    goodput = []
    for w in [1, 2, 4, 8, 16, 32]:
        assert w <= 2 * bdp_frames
        r = transfer(data, spec, window=w)
        goodput.append(len(data) / r.elapsed)
    assert all(b >= a * 0.999 for a, b in zip(goodput, goodput[1:])), goodput


def test_retransmit_timer_backs_off_to_rto_max():
    ep = ArqEndpoint(established=True, rto_initial=0.5, budget=16)
    ep.send_message(b"p")
    ep.drive(0.0)
    t = 0.0
    for _ in range(16):
        t = ep.next_timeout()
        assert ep.drive(t)
    assert ep.inflight[0][4] == 2.0
    with pytest.raises(ConnectionDead):
        ep.drive(ep.next_timeout())


# ------------------------------------------------------------------ events

def test_event_packet_round_trip():
    p = EventPacket([0, 5, 5, (1 << 48) - 1], [1, 2, 0xFFFF, 0])
    assert EventPacket.decode(p.encode()) == p
    assert len(p.encode()) == 4 + 8 * 4


def test_event_packet_invariants():
    with pytest.raises(ValueError):
        EventPacket([3, 2], [0, 0])
    with pytest.raises(ValueError):
        EventPacket([1 << 48], [0])


def test_event_receiver_drops_malformed():
    r = EventReceiver()
    r.on_datagram(b"garbage")
    good = EventPacket([1, 2], [3, 4]).encode()
    r.on_datagram(good[:-1])
    r.on_datagram(good[:4] + good[12:] + good[4:12])  # decreasing timestamps
    r.on_datagram(good)
    assert r.malformed == 3
    assert [p.events() for p in r.poll()] == [[(1, 3), (2, 4)]]


def test_events_total_loss_is_silent():
    link = LinkDirection(LossyLinkSpec(drop=1.0), 2)
    rec = EventReceiver()
    for p in packetize(np.arange(1000), np.arange(1000) % 7):
        for _ in link.transmit(0.0, p.encode()):
            rec.on_datagram(p.encode())
    assert rec.poll() == [] and rec.malformed == 0


def test_event_latency_below_reliable_queueing():
    event, reliable = event_vs_reliable_latency(LossyLinkSpec(base_delay=0.001, rate=10e6))
    assert event < 0.0011  # propagation plus one small serialization
    assert event < reliable


# --------------------------------------------------------------- commands

@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1)),
                max_size=50))
def test_command_records_round_trip(records):
    ops = [r[0] for r in records]
    addr = [r[1] for r in records]
    words = [r[2] for r in records]
    raw = commands.encode(ops, addr, words)
    assert len(raw) == 12 * len(records)
    o, a, w = commands.decode(raw)
    assert (o.tolist(), a.tolist(), w.tolist()) == (ops, addr, words)


def test_command_record_layout():
    assert commands.encode_writes([0x01020304], [0xAABBCCDD]) == bytes(
        [1, 0, 0, 0, 1, 2, 3, 4, 0xAA, 0xBB, 0xCC, 0xDD])
    with pytest.raises(commands.MalformedCommands):
        commands.decode(bytes(13))
    with pytest.raises(commands.MalformedCommands):
        commands.decode(bytes([7]) + bytes(11))


def test_playback_payload_round_trip():
    fpga, t, a = decode_playback(encode_playback(12, [1, 2, 3], [7, 8, 9]))
    assert fpga == 12 and t.tolist() == [1, 2, 3] and a.tolist() == [7, 8, 9]


# -------------------------------------------------------------------- udp

@pytest.fixture
def echo_server():
    def handler(peer, kind, data):
        if kind == 15:
            return [(15, b"nope")]
        return [(kind, data)]
    received = []
    s = Server("127.0.0.1", 0, handler, on_events=lambda peer, p: received.append(p)).start()
    s.received = received
    yield s
    s.stop()


def test_udp_open_and_echo(echo_server):
    with Connection.open(echo_server.address) as c:
        assert c.endpoint.established and c.endpoint.snd_nxt == 0
        data = os.urandom(100000)
        assert c.request(data, 3) == (3, data)


def test_udp_double_open_resets(echo_server):
    with Connection.open(echo_server.address) as c:
        c.request(b"a" * 5000, 1)
        assert c.endpoint.snd_nxt > 0
        c.reopen()
        assert c.endpoint.snd_nxt == 0 and c.endpoint.rcv_nxt == 0
        assert c.request(b"again", 1) == (1, b"again")


def test_udp_events_on_separate_port(echo_server):
    with Connection.open(echo_server.address) as c:
        for p in packetize(np.arange(1000), np.arange(1000) % 512):
            c.send_events(p)
        deadline = time.monotonic() + 5
        while sum(len(p) for p in echo_server.received) < 1000 and time.monotonic() < deadline:
            time.sleep(0.01)
    got = [e for p in echo_server.received for e in p.events()]
    assert got == [(i, i % 512) for i in range(1000)]


def test_udp_refused():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises((Refused, Timeout)):
        Connection.open(("127.0.0.1", port), timeout=1.0)


def test_udp_timeout_against_silent_peer():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    try:
        t0 = time.monotonic()
        with pytest.raises(Timeout):
            Connection.open(s.getsockname(), timeout=0.3)
        assert time.monotonic() - t0 < 2
    finally:
        s.close()


def test_client_surfaces_remote_errors(echo_server):
    client = DeviceClient(Connection.open(echo_server.address), timeout=5)
    with client:
        with pytest.raises(RemoteError, match="nope"):
            client._request(15, b"x")
        assert client.read_registers([1, 2]).tolist() == [0, 0]  # echo mirrors the request
