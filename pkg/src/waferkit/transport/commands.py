"""Register command records carried in REGISTER messages.

Each record is 12 bytes, big-endian: ``op:8 pad:24 address:32 word:32`` with
op 0 = read and 1 = write.  A response mirrors the request, with the word
of a read filled in.
"""
from __future__ import annotations

import numpy as np

OP_READ = 0
OP_WRITE = 1
RECORD = np.dtype([("op", "u1"), ("pad", "V3"), ("address", ">u4"), ("word", ">u4")])
assert RECORD.itemsize == 12


class MalformedCommands(ValueError):
    pass


def encode(ops, addresses, words=None) -> bytes:
    addresses = np.asarray(addresses, dtype=np.uint32).ravel()
    rec = np.zeros(len(addresses), dtype=RECORD)
    rec["op"] = ops
    rec["address"] = addresses
    if words is not None:
        rec["word"] = np.asarray(words, dtype=np.uint32).ravel()
    return rec.tobytes()


def encode_writes(addresses, words) -> bytes:
    return encode(OP_WRITE, addresses, words)


def encode_reads(addresses) -> bytes:
    return encode(OP_READ, addresses)


def decode(payload: bytes):
    """``(ops, addresses, words)`` as uint arrays."""
    if len(payload) % RECORD.itemsize:
        raise MalformedCommands(f"payload of {len(payload)} bytes is not a whole number of records")
    rec = np.frombuffer(payload, dtype=RECORD)
    ops = rec["op"].astype(np.uint8)
    if len(ops) and ops.max() > OP_WRITE:
        raise MalformedCommands(f"unknown op {int(ops.max())}")
    return ops, rec["address"].astype(np.uint32), rec["word"].astype(np.uint32)
