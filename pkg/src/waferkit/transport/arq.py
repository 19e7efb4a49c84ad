"""Sliding-window ARQ engine without I/O.

The engine is driven with explicit timestamps: feed received datagrams to
:meth:`ArqEndpoint.on_datagram`, call :meth:`ArqEndpoint.drive` to collect
datagrams to transmit, and sleep until :meth:`ArqEndpoint.next_timeout`.
The same engine runs over real UDP sockets and inside the lossy-link harness.

Reliability: cumulative ACKs, per-frame retransmission timers with
exponential backoff and a retransmit budget.  RTT follows the usual
smoothed estimator (``rto = srtt + 4 rttvar``) with Karn's rule.  The
congestion window starts at one frame, grows by one per newly acknowledged
frame below ``ssthresh`` and by ``1/cwnd`` above it.
"""
from __future__ import annotations

from collections import deque

from .frame import (ACK, DATA, FLAG_KIND_MASK, FLAG_MORE, FLAG_RST_ACK, HEADER, HEADER_SIZE, MAGIC,
                    MAX_PAYLOAD, RST, SEQ_MOD)

_HALF = SEQ_MOD >> 1


class ConnectionDead(Exception):
    """Retransmit budget exhausted."""


class ArqEndpoint:
    def __init__(self, window: int = 64, rto_initial: float = 0.2, rto_min: float = 0.01,
                 rto_max: float = 2.0, budget: int = 16, mss: int = MAX_PAYLOAD, established: bool = False):
        if window < 1:
            raise ValueError("window must be at least one frame")
        if not 0 < mss <= MAX_PAYLOAD:
            raise ValueError(f"mss must be in (0, {MAX_PAYLOAD}]")
        self.window = window
        self.rto_initial = rto_initial
        self.rto_min = rto_min
        self.rto_max = rto_max
        self.budget = budget
        self.mss = mss
        self.frames_sent = 0
        self.retransmissions = 0
        self.malformed = 0
        self.messages: deque = deque()
        self._reset_state()
        self.state = "established" if established else "closed"
        self._rst_deadline = None
        self._rst_tries = 0
        self._rst_rto = rto_initial
        self._rst_reply = False

    def _reset_state(self):
        self.snd_una = 0
        self.snd_nxt = 0
        self.rcv_nxt = 0
        self.queue: deque = deque()  # (payload, flags) not yet sent
        self.inflight: dict[int, list] = {}  # seq -> [payload, flags, sent_at, deadline, frame_rto, tries]
        self._ooo: dict[int, tuple] = {}
        self._partial: list[bytes] = []
        self._ack_pending = False
        self.srtt = None
        self.rttvar = None
        self.rto = self.rto_initial
        self.cwnd = 1.0
        self.ssthresh = max(1, self.window // 2)

    # ------------------------------------------------------------------ api

    def connect(self, now: float) -> None:
        """Start (or restart) the reset handshake; both sequence spaces return to zero."""
        pending = list(self.queue)
        self._reset_state()
        self.queue.extend(pending)
        self.state = "connecting"
        self._rst_tries = 0
        self._rst_rto = self.rto_initial
        self._rst_deadline = now  # send on next drive

    @property
    def established(self) -> bool:
        return self.state == "established"

    def send_message(self, data: bytes, kind: int = 0) -> int:
        """Queue ``data`` as one message; returns the number of frames used (0 for empty data)."""
        if not 0 <= kind <= FLAG_KIND_MASK:
            raise ValueError("message kind is 4 bits")
        n = len(data)
        if n == 0:
            return 0
        mss = self.mss
        view = memoryview(data)
        count = 0
        for start in range(0, n, mss):
            chunk = bytes(view[start:start + mss])
            flags = kind | (FLAG_MORE if start + mss < n else 0)
            self.queue.append((chunk, flags))
            count += 1
        return count

    def receive_message(self):
        """Next complete ``(kind, bytes)`` message, or None."""
        return self.messages.popleft() if self.messages else None

    @property
    def unacked(self) -> int:
        return len(self.inflight)

    @property
    def idle(self) -> bool:
        return not self.inflight and not self.queue and self.state != "connecting"

    def next_timeout(self):
        """Earliest timer deadline, or None.

        Work triggered by an incoming datagram or a new message is done by
        the next :meth:`drive`; callers drive after every such event.
        """
        t = self._rst_deadline if self.state == "connecting" else None
        for entry in self.inflight.values():
            d = entry[3]
            if t is None or d < t:
                t = d
        return t

    # ------------------------------------------------------------- receive

    def on_datagram(self, data: bytes, now: float) -> None:
        if len(data) < HEADER_SIZE:
            self.malformed += 1
            return
        magic, ftype, flags, seq, ack = HEADER.unpack_from(data)
        if magic != MAGIC or ftype > RST or (ftype != DATA and len(data) != HEADER_SIZE):
            self.malformed += 1
            return
        if ftype == RST:
            if flags & FLAG_RST_ACK:
                if self.state == "connecting":
                    self.state = "established"
                    self._rst_deadline = None
            else:
                pending = list(self.queue) if self.state == "connecting" else []
                self._reset_state()
                self.queue.extend(pending)
                self.state = "established"
                self._rst_deadline = None
                self._rst_reply = True
            return
        if self.state != "established":
            return
        self._on_ack(ack, now)
        if ftype == DATA:
            self._on_data(seq, flags, data[HEADER_SIZE:])

    def _on_ack(self, ack: int, now: float) -> None:
        una = self.snd_una
        newly = (ack - una) % SEQ_MOD
        if newly == 0 or newly >= _HALF or newly > (self.snd_nxt - una) % SEQ_MOD:
            return
        sample = None
        inflight = self.inflight
        cwnd, ssthresh, window = self.cwnd, self.ssthresh, self.window
        for i in range(newly):
            entry = inflight.pop((una + i) % SEQ_MOD, None)
            if entry is None:
                continue
            if entry[5] == 1:  # Karn: only frames sent exactly once give samples
                sample = now - entry[2]
            if cwnd < ssthresh:
                cwnd += 1.0
            else:
                cwnd += 1.0 / cwnd
        self.cwnd = min(cwnd, float(window))
        self.snd_una = ack
        if sample is not None:
            self._rtt_sample(sample)

    def _rtt_sample(self, s: float) -> None:
        if self.srtt is None:
            self.srtt = s
            self.rttvar = s / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - s)
            self.srtt = 0.875 * self.srtt + 0.125 * s
        self.rto = self.compute_rto()

    def compute_rto(self) -> float:
        """``srtt + 4 rttvar`` clamped to ``[rto_min, rto_max]``; the initial value before any sample."""
        if self.srtt is None:
            return self.rto_initial
        return min(max(self.srtt + 4 * self.rttvar, self.rto_min), self.rto_max)

    def _on_data(self, seq: int, flags: int, payload: bytes) -> None:
        self._ack_pending = True
        offset = (seq - self.rcv_nxt) % SEQ_MOD
        if offset >= self.window:
            return  # duplicate or beyond the window: only re-acknowledge
        ooo = self._ooo
        if seq not in ooo:
            ooo[seq] = (flags, payload)
        nxt = self.rcv_nxt
        partial = self._partial
        while nxt in ooo:
            f, p = ooo.pop(nxt)
            partial.append(p)
            if not f & FLAG_MORE:
                self.messages.append((f & FLAG_KIND_MASK, b"".join(partial)))
                partial.clear()
            nxt = (nxt + 1) % SEQ_MOD
        self.rcv_nxt = nxt

    # ---------------------------------------------------------------- send

    def drive(self, now: float) -> list[bytes]:
        out = []
        pack = HEADER.pack
        if self._rst_reply:
            out.append(pack(MAGIC, RST, FLAG_RST_ACK, 0, 0))
            self._rst_reply = False
        if self.state == "connecting":
            if self._rst_deadline is not None and self._rst_deadline <= now:
                self._rst_tries += 1
                if self._rst_tries > self.budget:
                    raise ConnectionDead("no answer to reset")
                if self._rst_tries > 1:
                    self._rst_rto = min(self._rst_rto * 2, self.rto_max)
                self._rst_deadline = now + self._rst_rto
                out.append(pack(MAGIC, RST, 0, 0, 0))
            return out
        if self.state != "established":
            return out
        rcv = self.rcv_nxt
        # retransmissions
        for seq, entry in self.inflight.items():
            if entry[3] <= now:
                entry[5] += 1
                if entry[5] > self.budget + 1:
                    raise ConnectionDead(f"frame {seq} unacknowledged after {self.budget} retransmissions")
                entry[4] = min(entry[4] * 2, self.rto_max)
                entry[3] = now + entry[4]
                entry[2] = now
                out.append(pack(MAGIC, DATA, entry[1], seq, rcv) + entry[0])
                self.retransmissions += 1
        # new frames within min(window, cwnd)
        limit = min(self.window, int(self.cwnd))
        queue = self.queue
        inflight = self.inflight
        while queue and len(inflight) < limit:
            payload, flags = queue.popleft()
            seq = self.snd_nxt
            inflight[seq] = [payload, flags, now, now + self.rto, self.rto, 1]
            self.snd_nxt = (seq + 1) % SEQ_MOD
            out.append(pack(MAGIC, DATA, flags, seq, rcv) + payload)
        if self._ack_pending:
            out.append(pack(MAGIC, ACK, 0, 0, rcv))
            self._ack_pending = False
        self.frames_sent += len(out)
        return out
