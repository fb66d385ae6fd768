"""Transports: in-process, discrete-event simulated, and TCP sockets."""

from .behaviours import Behaviour
from .local import LocalNetwork, LocalTransport

__all__ = ["Behaviour", "LocalNetwork", "LocalTransport"]
