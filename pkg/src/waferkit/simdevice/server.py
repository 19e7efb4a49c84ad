"""Serve a simulated wafer over the transport protocol."""
from __future__ import annotations

import json
import logging

from ..transport import commands
from ..transport.client import decode_playback
from ..transport.frame import KIND_CONTROL, KIND_ERROR, KIND_PLAYBACK, KIND_READOUT, KIND_REGISTER
from ..transport.udp import Server
from .device import DeviceError, SimulatedWafer

log = logging.getLogger(__name__)


def _json(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode()


def make_handler(device: SimulatedWafer):
    def handle(peer, kind, payload):
        try:
            if kind == KIND_REGISTER:
                ops, addrs, words = commands.decode(payload)
                # records execute in order; consecutive writes are batched
                out = words.copy()
                i, n = 0, len(ops)
                while i < n:
                    j = i
                    while j < n and ops[j] == ops[i]:
                        j += 1
                    if ops[i] == commands.OP_WRITE:
                        device.write_batch(addrs[i:j], words[i:j])
                    else:
                        out[i:j] = device.read_batch(addrs[i:j])
                    i = j
                return [(KIND_REGISTER, commands.encode(ops, addrs, out))]
            if kind == KIND_CONTROL:
                request = json.loads(payload)
                op = request.pop("op")
                return [(KIND_CONTROL, _json(device.control(op, **request)))]
            if kind == KIND_PLAYBACK:
                fpga, times, addrs = decode_playback(payload)
                return [(KIND_PLAYBACK, _json({"entries": device.upload_playback(fpga, times, addrs)}))]
            if kind == KIND_READOUT:
                return [(KIND_READOUT, _json(device.readout()))]
            return [(KIND_ERROR, f"unknown message kind {kind}".encode())]
        except (DeviceError, ValueError, KeyError, TypeError) as err:
            log.info("request from %s failed: %s", peer, err)
            return [(KIND_ERROR, f"{type(err).__name__}: {err}".encode())]

    return handle


def serve(device: SimulatedWafer, host: str = "127.0.0.1", port: int = 0, **arq_args) -> Server:
    """Start a background server for ``device``; ``server.address`` is the bound endpoint."""
    return Server(host, port, make_handler(device), **arq_args).start()


__all__ = ["serve", "make_handler"]
