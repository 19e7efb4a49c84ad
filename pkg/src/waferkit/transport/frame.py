"""Wire format of the reliable channel.

Header, 12 bytes, big-endian::

    magic+version:16  type:8  flags:8  seq:32  ack:32

``type`` is DATA, ACK or RST.  The low four ``flags`` bits carry the message
kind of a DATA frame, ``MORE`` marks a fragment that is continued by the next
sequence number, and ``RST_ACK`` answers a reset.  Only DATA frames carry a
payload (at most 1400 bytes).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = 0xB501  # high byte: protocol tag, low byte: version 1
HEADER = struct.Struct(">HBBII")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1400
SEQ_MOD = 1 << 32

DATA, ACK, RST = 0, 1, 2
FLAG_KIND_MASK = 0x0F
FLAG_MORE = 0x80
FLAG_RST_ACK = 0x01

# message kinds carried in the low flag bits
KIND_REGISTER = 0
KIND_PLAYBACK = 1
KIND_CONTROL = 2
KIND_READOUT = 3
KIND_ERROR = 15


class MalformedFrame(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    type: int
    seq: int = 0
    ack: int = 0
    flags: int = 0
    payload: bytes = b""

    def __post_init__(self):
        if self.type not in (DATA, ACK, RST):
            raise ValueError(f"unknown frame type {self.type}")
        if not 0 <= self.flags <= 0xFF:
            raise ValueError("flags are 8 bits")
        if not (0 <= self.seq < SEQ_MOD and 0 <= self.ack < SEQ_MOD):
            raise ValueError("seq and ack are 32-bit")
        if self.payload and self.type != DATA:
            raise ValueError("only DATA frames carry a payload")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")

    @property
    def kind(self) -> int:
        return self.flags & FLAG_KIND_MASK

    @property
    def more(self) -> bool:
        return bool(self.flags & FLAG_MORE)

    def encode(self) -> bytes:
        return HEADER.pack(MAGIC, self.type, self.flags, self.seq, self.ack) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        if len(data) < HEADER_SIZE:
            raise MalformedFrame("short frame")
        magic, ftype, flags, seq, ack = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise MalformedFrame(f"bad magic {magic:#06x}")
        payload = bytes(data[HEADER_SIZE:])
        try:
            return cls(ftype, seq, ack, flags, payload)
        except ValueError as err:
            raise MalformedFrame(str(err)) from err


def seq_lt(a: int, b: int) -> bool:
    """Serial-number comparison modulo 2**32."""
    return a != b and ((b - a) % SEQ_MOD) < (SEQ_MOD >> 1)


def seq_diff(a: int, b: int) -> int:
    """``a - b`` in serial arithmetic, in [-2**31, 2**31)."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= (SEQ_MOD >> 1) else d
