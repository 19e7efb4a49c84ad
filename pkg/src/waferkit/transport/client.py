"""Request/response client for a device reached over the reliable channel.

Message kinds (low flag bits of DATA frames):

* REGISTER: command records, answered with mirrored records;
* CONTROL: a JSON object ``{"op": ..., **args}``, answered with JSON;
* PLAYBACK: ``fpga:16`` followed by ``(time:64, address:32)`` records,
  answered with a JSON acknowledgement;
* READOUT: JSON request, answered with a JSON readout;
* ERROR: UTF-8 diagnostic sent instead of any reply.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import commands
from .frame import KIND_CONTROL, KIND_ERROR, KIND_PLAYBACK, KIND_READOUT, KIND_REGISTER
from .udp import Connection

PLAYBACK_HEAD = struct.Struct(">H")
PLAYBACK_RECORD = np.dtype([("time", ">u8"), ("address", ">u4")])


class RemoteError(Exception):
    """The device answered with an error message."""


def encode_playback(fpga: int, times, addresses) -> bytes:
    rec = np.zeros(len(times), dtype=PLAYBACK_RECORD)
    rec["time"] = np.asarray(times, dtype=np.uint64)
    rec["address"] = np.asarray(addresses, dtype=np.uint32)
    return PLAYBACK_HEAD.pack(fpga) + rec.tobytes()


def decode_playback(payload: bytes):
    if len(payload) < PLAYBACK_HEAD.size or (len(payload) - PLAYBACK_HEAD.size) % PLAYBACK_RECORD.itemsize:
        raise ValueError("malformed playback payload")
    (fpga,) = PLAYBACK_HEAD.unpack_from(payload)
    rec = np.frombuffer(payload, dtype=PLAYBACK_RECORD, offset=PLAYBACK_HEAD.size)
    return fpga, rec["time"].astype(np.int64), rec["address"].astype(np.int64)


class DeviceClient:
    def __init__(self, conn: Connection, timeout: float = 60.0):
        self.conn = conn
        self.timeout = timeout

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0, **arq_args) -> "DeviceClient":
        return cls(Connection.open((host, port), timeout=timeout, **arq_args))

    def _request(self, kind: int, payload: bytes):
        rkind, reply = self.conn.request(payload, kind, self.timeout)
        if rkind == KIND_ERROR:
            raise RemoteError(reply.decode("utf-8", "replace"))
        if rkind != kind:
            raise RemoteError(f"reply of kind {rkind} to a request of kind {kind}")
        return reply

    def write_registers(self, addresses, words) -> None:
        a = np.asarray(addresses, dtype=np.uint32).ravel()
        if not len(a):
            return
        reply = self._request(KIND_REGISTER, commands.encode_writes(a, words))
        if len(reply) != len(a) * commands.RECORD.itemsize:
            raise RemoteError("short register acknowledgement")

    def read_registers(self, addresses) -> np.ndarray:
        a = np.asarray(addresses, dtype=np.uint32).ravel()
        if not len(a):
            return np.zeros(0, dtype=np.uint32)
        _, addr, words = commands.decode(self._request(KIND_REGISTER, commands.encode_reads(a)))
        if not np.array_equal(addr, a):
            raise RemoteError("register reply does not mirror the request")
        return words

    def control(self, command: str, **args):
        reply = self._request(KIND_CONTROL, json.dumps({"op": command, **args}).encode())
        return json.loads(reply)

    def upload_playback(self, fpga: int, times, addresses):
        return json.loads(self._request(KIND_PLAYBACK, encode_playback(fpga, times, addresses)))

    def readout(self, **args):
        return json.loads(self._request(KIND_READOUT, json.dumps(args).encode()))

    def close(self) -> None:
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
