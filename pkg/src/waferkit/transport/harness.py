"""Deterministic lossy link for exercising the ARQ engine in simulated time.

Two :class:`ArqEndpoint` objects exchange datagrams through two independent
link directions.  Each direction drops, duplicates, reorders and delays
datagrams using its own seeded ``random.Random``; given the same spec the
whole run, including the frame trace, is reproducible.
"""
from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass, field

from .arq import ArqEndpoint, ConnectionDead


@dataclass(frozen=True)
class LossyLinkSpec:
    drop: float = 0.0
    reorder: float = 0.0
    duplicate: float = 0.0
    base_delay: float = 0.005
    jitter: float = 0.0
    seed: int = 0
    reorder_delay: float | None = None  # extra delay of a reordered datagram; default 3*base_delay
    rate: float | None = None  # bytes per second per direction; None means unlimited

    def __post_init__(self):
        for name in ("drop", "reorder", "duplicate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability {p} outside [0, 1]")
        if self.base_delay < 0 or self.jitter < 0:
            raise ValueError("delays must be non-negative")
        if self.rate is not None and self.rate <= 0:
            raise ValueError("rate must be positive")


class LinkDirection:
    def __init__(self, spec: LossyLinkSpec, direction: int):
        self.spec = spec
        self.rng = random.Random(spec.seed * 2 + direction)
        self.busy_until = 0.0
        self.sent = 0
        self.dropped = 0
        self.duplicated = 0
        self.reordered = 0

    def transmit(self, now: float, datagram: bytes) -> list[float]:
        """Arrival times of the copies of ``datagram`` that survive."""
        spec, rng = self.spec, self.rng
        self.sent += 1
        start = now
        if spec.rate is not None:
            start = max(now, self.busy_until)
            self.busy_until = start + len(datagram) / spec.rate
            start = self.busy_until
        if rng.random() < spec.drop:
            self.dropped += 1
            return []
        copies = 1
        if spec.duplicate and rng.random() < spec.duplicate:
            copies = 2
            self.duplicated += 1
        out = []
        for _ in range(copies):
            delay = spec.base_delay
            if spec.jitter:
                delay += rng.random() * spec.jitter
            if spec.reorder and rng.random() < spec.reorder:
                self.reordered += 1
                delay += spec.reorder_delay if spec.reorder_delay is not None else 3 * spec.base_delay
            out.append(start + delay)
        return out


class WindowViolation(AssertionError):
    pass


@dataclass
class TransferResult:
    received: bytes
    elapsed: float
    frames: int
    retransmissions: int
    digest: int
    messages: list = field(default_factory=list)


class Harness:
    """Event loop over two endpoints joined by a lossy link."""

    def __init__(self, spec: LossyLinkSpec, a: ArqEndpoint, b: ArqEndpoint, check_window: bool = True):
        self.spec = spec
        self.endpoints = (a, b)
        self.links = (LinkDirection(spec, 0), LinkDirection(spec, 1))  # a->b, b->a
        self.now = 0.0
        self._events: list = []
        self._counter = 0
        self.digest = 0
        self.check_window = check_window

    def _emit(self, src: int, datagrams):
        link = self.links[src]
        for d in datagrams:
            self.digest = zlib.crc32(d, zlib.crc32(b"%d:%.9f" % (src, self.now), self.digest))
            for t in link.transmit(self.now, d):
                self._counter += 1
                heapq.heappush(self._events, (t, self._counter, 1 - src, d))

    def drive(self, idx: int):
        ep = self.endpoints[idx]
        self._emit(idx, ep.drive(self.now))
        if self.check_window:
            limit = min(ep.window, int(ep.cwnd))
            if len(ep.inflight) > limit:
                raise WindowViolation(f"{len(ep.inflight)} unacked frames exceed min(W, cwnd) = {limit}")

    def step(self) -> bool:
        """Advance to the next event; False when nothing is left to do."""
        a, b = self.endpoints
        ta, tb = a.next_timeout(), b.next_timeout()
        t_event = self._events[0][0] if self._events else None
        candidates = [t for t in (t_event, ta, tb) if t is not None]
        if not candidates:
            return False
        t = min(candidates)
        self.now = max(self.now, t)
        if t_event is not None and t_event <= t:
            _, _, dst, data = heapq.heappop(self._events)
            self.endpoints[dst].on_datagram(data, self.now)
            self.drive(dst)
        else:
            if ta is not None and ta <= self.now:
                self.drive(0)
            if tb is not None and tb <= self.now:
                self.drive(1)
        return True

    def run(self, until=None, max_time: float = 1e6, observer=None) -> None:
        self.drive(0)
        self.drive(1)
        while self.now <= max_time:
            if until is not None and until():
                return
            if observer is not None:
                observer(self)
            if not self.step():
                return
        raise TimeoutError(f"simulation exceeded {max_time} s")


def transfer(data: bytes, spec: LossyLinkSpec, window: int = 64, **endpoint_args) -> TransferResult:
    """Send ``data`` as one message from endpoint a to b; return what b received."""
    a = ArqEndpoint(window=window, established=True, **endpoint_args)
    b = ArqEndpoint(window=window, established=True, **endpoint_args)
    h = Harness(spec, a, b)
    a.send_message(data)
    got = []

    def done():
        msg = b.receive_message()
        if msg is not None:
            got.append(msg)
        return (got or not data) and a.idle

    h.run(until=done)
    received = b"".join(m[1] for m in got)
    return TransferResult(received, h.now, a.frames_sent + b.frames_sent, a.retransmissions, h.digest, got)


__all__ = ["LossyLinkSpec", "LinkDirection", "Harness", "TransferResult", "transfer", "ConnectionDead",
           "WindowViolation", "event_vs_reliable_latency"]


def event_vs_reliable_latency(spec: LossyLinkSpec, bulk: int = 1 << 20, inject_at: float = 0.05,
                              window: int = 64) -> tuple[float, float]:
    """Latency of an event packet and of a small reliable message, both sent during a bulk transfer.

    Events use their own link direction (their own port and queue), so they
    never wait behind reliable frames.  Returns ``(event, reliable)`` seconds.
    """
    a = ArqEndpoint(window=window, established=True)
    b = ArqEndpoint(window=window, established=True)
    h = Harness(spec, a, b)
    events = LinkDirection(spec, 2)
    a.send_message(bytes(bulk), kind=0)
    state = {"sent": None, "event": None, "reliable": None}

    def observer(hh):
        if state["sent"] is None and hh.now >= inject_at:
            state["sent"] = hh.now
            a.send_message(b"probe", kind=2)
            arrivals = events.transmit(hh.now, b"event")
            state["event"] = (min(arrivals) - hh.now) if arrivals else float("inf")

    def done():
        while (msg := b.receive_message()) is not None:
            if msg[0] == 2:
                state["reliable"] = h.now - state["sent"]
        return state["reliable"] is not None

    h.run(until=done, observer=observer)
    return state["event"], state["reliable"]
