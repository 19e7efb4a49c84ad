"""Best-effort spike event packets.

Layout, big-endian: ``magic:16 count:16`` followed by ``count`` records of
``timestamp:48 address:16``.  Packets carry no sequence numbers and are never
retransmitted; a receiver silently drops anything malformed and counts it.
"""
from __future__ import annotations

import struct

import numpy as np

EVENT_MAGIC = 0xB5E1
_HEAD = struct.Struct(">HH")
RECORD_SIZE = 8
MAX_EVENTS = 180  # keeps one packet below the reliable channel's frame size
TS_MAX = (1 << 48) - 1


class MalformedPacket(ValueError):
    pass


class EventPacket:
    """Ordered (timestamp, address) pairs with non-decreasing timestamps."""

    __slots__ = ("timestamps", "addresses")

    def __init__(self, timestamps, addresses):
        ts = np.asarray(timestamps, dtype=np.uint64).ravel()
        ad = np.asarray(addresses, dtype=np.int64).ravel()
        if ts.shape != ad.shape:
            raise ValueError("timestamps and addresses differ in length")
        if len(ts) > MAX_EVENTS:
            raise ValueError(f"at most {MAX_EVENTS} events per packet")
        if len(ts) and int(ts.max()) > TS_MAX:
            raise ValueError("timestamps are 48-bit")
        if len(ad) and (ad.min() < 0 or ad.max() > 0xFFFF):
            raise ValueError("addresses are 16-bit")
        if len(ts) > 1 and np.any(np.diff(ts.astype(np.int64)) < 0):
            raise ValueError("timestamps must be non-decreasing within a packet")
        self.timestamps = ts
        self.addresses = ad.astype(np.uint16)

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        return (isinstance(other, EventPacket) and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.addresses, other.addresses))

    def events(self) -> list[tuple[int, int]]:
        return list(zip(self.timestamps.tolist(), self.addresses.tolist()))

    def encode(self) -> bytes:
        words = (self.timestamps << np.uint64(16)) | self.addresses.astype(np.uint64)
        return _HEAD.pack(EVENT_MAGIC, len(self)) + words.astype(">u8").tobytes()

    @classmethod
    def decode(cls, data: bytes) -> "EventPacket":
        if len(data) < _HEAD.size:
            raise MalformedPacket("short packet")
        magic, count = _HEAD.unpack_from(data)
        if magic != EVENT_MAGIC:
            raise MalformedPacket(f"bad magic {magic:#06x}")
        if len(data) != _HEAD.size + count * RECORD_SIZE:
            raise MalformedPacket("length does not match event count")
        words = np.frombuffer(data, dtype=">u8", offset=_HEAD.size).astype(np.uint64)
        try:
            return cls(words >> np.uint64(16), words & np.uint64(0xFFFF))
        except ValueError as err:
            raise MalformedPacket(str(err)) from err


def packetize(timestamps, addresses) -> list[EventPacket]:
    """Split a sorted event stream into packets."""
    ts = np.asarray(timestamps, dtype=np.uint64)
    ad = np.asarray(addresses)
    return [EventPacket(ts[i:i + MAX_EVENTS], ad[i:i + MAX_EVENTS]) for i in range(0, len(ts), MAX_EVENTS)]


class EventReceiver:
    """Collects decoded packets; malformed datagrams are counted and dropped."""

    def __init__(self):
        self.packets: list[EventPacket] = []
        self.malformed = 0

    def on_datagram(self, data: bytes) -> None:
        try:
            self.packets.append(EventPacket.decode(data))
        except MalformedPacket:
            self.malformed += 1

    def poll(self) -> list[EventPacket]:
        out, self.packets = self.packets, []
        return out
