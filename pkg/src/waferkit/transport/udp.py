"""ARQ engine and event channel bound to UDP sockets.

A :class:`Connection` owns two sockets: the reliable channel and, on a
separate port, the best-effort event channel, so spike events never queue
behind configuration traffic.  A :class:`Server` listens on ``port`` (reliable)
and ``port + 1`` (events) and keeps one ARQ endpoint per peer.
"""
from __future__ import annotations

import logging
import select
import socket
import threading
import time

from .arq import ArqEndpoint, ConnectionDead
from .events import EventPacket, EventReceiver

log = logging.getLogger(__name__)

_RECV = 65535


class Timeout(Exception):
    pass


class Refused(Exception):
    pass


class BindError(OSError):
    pass


def _drain(sock, handle):
    while True:
        try:
            data, addr = sock.recvfrom(_RECV)
        except (BlockingIOError, InterruptedError):
            return
        handle(data, addr)


class Connection:
    def __init__(self, sock, evsock, remote, endpoint: ArqEndpoint):
        self.sock = sock
        self.evsock = evsock
        self.remote = remote
        self.endpoint = endpoint
        self.events = EventReceiver()
        self.closed = False

    @classmethod
    def open(cls, remote, local=None, timeout: float = 5.0, **arq_args) -> "Connection":
        """Reset handshake with ``remote`` (host, port)."""
        host = local[0] if local else ("127.0.0.1" if remote[0] in ("127.0.0.1", "localhost") else "0.0.0.0")
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        evsock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((host, local[1] if local else 0))
            evsock.bind((host, 0))
            sock.connect(remote)  # connected sockets surface ICMP port-unreachable as ECONNREFUSED
            evsock.connect((remote[0], remote[1] + 1))
        except OSError:
            sock.close()
            evsock.close()
            raise
        sock.setblocking(False)
        evsock.setblocking(False)
        conn = cls(sock, evsock, remote, ArqEndpoint(**arq_args))
        try:
            conn.reopen(timeout)
        except BaseException:
            conn.close()
            raise
        return conn

    def reopen(self, timeout: float = 5.0) -> None:
        """(Re)run the reset handshake; both sequence spaces restart at zero."""
        ep = self.endpoint
        ep.connect(time.monotonic())
        deadline = time.monotonic() + timeout
        while not ep.established:
            if time.monotonic() >= deadline:
                raise Timeout(f"no answer from {self.remote[0]}:{self.remote[1]} within {timeout} s")
            try:
                self.poll(deadline - time.monotonic())
            except ConnectionDead as err:
                raise Timeout(str(err)) from err

    # ------------------------------------------------------------- polling

    def _flush(self, out):
        for d in out:
            try:
                self.sock.send(d)
            except ConnectionRefusedError as err:
                raise Refused(f"{self.remote[0]}:{self.remote[1]} refused") from err
            except BlockingIOError:
                pass  # the peer retransmission timers recover the frame

    def poll(self, timeout: float = 0.0) -> None:
        """Wait up to ``timeout`` seconds for traffic or a timer, then process it."""
        ep = self.endpoint
        now = time.monotonic()
        self._flush(ep.drive(now))
        nt = ep.next_timeout()
        wait = max(0.0, timeout)
        if nt is not None:
            wait = min(wait, max(0.0, nt - now))
        ready, _, _ = select.select([self.sock, self.evsock], [], [], wait)
        now = time.monotonic()
        if self.sock in ready:
            try:
                _drain(self.sock, lambda d, a: ep.on_datagram(d, now))
            except ConnectionRefusedError as err:
                raise Refused(f"{self.remote[0]}:{self.remote[1]} refused") from err
        if self.evsock in ready:
            try:
                _drain(self.evsock, lambda d, a: self.events.on_datagram(d))
            except ConnectionRefusedError:
                pass  # best effort
        self._flush(ep.drive(time.monotonic()))

    # ----------------------------------------------------------- reliable

    def send_reliable(self, data: bytes, kind: int = 0) -> int:
        n = self.endpoint.send_message(data, kind)
        self._flush(self.endpoint.drive(time.monotonic()))
        return n

    def flush(self, timeout: float = 30.0) -> None:
        """Block until every queued frame is acknowledged."""
        deadline = time.monotonic() + timeout
        while not self.endpoint.idle:
            if time.monotonic() >= deadline:
                raise Timeout("send queue not drained")
            self.poll(deadline - time.monotonic())

    def recv_reliable(self, timeout: float = 30.0):
        """Next complete ``(kind, bytes)`` message."""
        deadline = time.monotonic() + timeout
        while True:
            msg = self.endpoint.receive_message()
            if msg is not None:
                return msg
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout("no message")
            self.poll(remaining)

    def request(self, data: bytes, kind: int, timeout: float = 30.0):
        self.send_reliable(data, kind)
        return self.recv_reliable(timeout)

    # -------------------------------------------------------------- events

    def send_events(self, packet: EventPacket) -> None:
        try:
            self.evsock.send(packet.encode())
        except OSError:
            pass  # fire and forget

    def poll_events(self) -> list[EventPacket]:
        self.poll(0.0)
        return self.events.poll()

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()
            self.evsock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open(remote, local=None, timeout: float = 5.0, **arq_args) -> Connection:  # noqa: A001
    return Connection.open(remote, local, timeout, **arq_args)


class Server:
    """Reliable request handling for many peers in one poll loop.

    ``handler(peer, kind, payload)`` returns a list of ``(kind, bytes)``
    replies; ``on_events(peer, packet)`` receives event packets.
    """

    def __init__(self, host: str, port: int, handler, on_events=None, **arq_args):
        self.handler = handler
        self.on_events = on_events
        self.arq_args = arq_args
        self.peers: dict = {}
        self.events = EventReceiver()
        self.sock, self.evsock = self._bind(host, port)
        self.address = self.sock.getsockname()
        self._stop = threading.Event()
        self._thread = None

    @staticmethod
    def _bind(host, port):
        for _ in range(32):
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            evsock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            try:
                sock.bind((host, port))
                evsock.bind((host, sock.getsockname()[1] + 1))
            except OSError as err:
                sock.close()
                evsock.close()
                if port:
                    raise BindError(f"cannot bind {host}:{port}/{port + 1}: {err}") from err
                continue
            sock.setblocking(False)
            evsock.setblocking(False)
            return sock, evsock
        raise BindError(f"no free port pair on {host}")

    def _peer(self, addr) -> ArqEndpoint:
        ep = self.peers.get(addr)
        if ep is None:
            ep = self.peers[addr] = ArqEndpoint(**self.arq_args)
        return ep

    def _on_datagram(self, data, addr, now):
        self._peer(addr).on_datagram(data, now)

    def _on_event(self, data, addr):
        before = self.events.malformed
        self.events.on_datagram(data)
        if self.events.malformed == before:
            packet = self.events.packets.pop()
            if self.on_events is not None:
                self.on_events(addr, packet)

    def poll(self, timeout: float = 0.05) -> None:
        now = time.monotonic()
        wait = timeout
        for ep in self.peers.values():
            nt = ep.next_timeout()
            if nt is not None:
                wait = min(wait, max(0.0, nt - now))
        ready, _, _ = select.select([self.sock, self.evsock], [], [], wait)
        now = time.monotonic()
        if self.sock in ready:
            _drain(self.sock, lambda d, a: self._on_datagram(d, a, now))
        if self.evsock in ready:
            _drain(self.evsock, self._on_event)
        for addr, ep in list(self.peers.items()):
            while (msg := ep.receive_message()) is not None:
                try:
                    replies = self.handler(addr, *msg) or []
                except Exception:  # the handler reports errors itself; never kill the loop
                    log.exception("request handler failed")
                    replies = []
                for kind, payload in replies:
                    ep.send_message(payload, kind)
            try:
                out = ep.drive(time.monotonic())
            except ConnectionDead:
                log.warning("peer %s:%d dead, dropping", *addr)
                del self.peers[addr]
                continue
            for d in out:
                try:
                    self.sock.sendto(d, addr)
                except OSError:
                    pass

    def serve_forever(self) -> None:
        while not self._stop.is_set():
            self.poll()

    def start(self) -> "Server":
        self._thread = threading.Thread(target=self.serve_forever, name="waferkit-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self.sock.close()
        self.evsock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
