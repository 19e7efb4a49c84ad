"""Reliable sliding-window transport, best-effort event channel, lossy-link harness."""
from .arq import ArqEndpoint, ConnectionDead
from .events import EventPacket, EventReceiver, MalformedPacket
from .frame import Frame, MalformedFrame
from .harness import Harness, LossyLinkSpec, transfer
from .udp import BindError, Connection, Refused, Server, Timeout

__all__ = ["ArqEndpoint", "ConnectionDead", "EventPacket", "EventReceiver", "MalformedPacket", "Frame",
           "MalformedFrame", "Harness", "LossyLinkSpec", "transfer", "BindError", "Connection", "Refused",
           "Server", "Timeout"]
