from __future__ import annotations

import logging
import os
import threading
import time

from ..transport import Channel, ChannelTimeout, Frame

log = logging.getLogger("kdflow.actors")

POLL_S = 0.5


class ShutdownRequested(Exception):
    pass


class Actor:
    role = "actor"

    def __init__(self, config, run_id: str, shared: bool):
        self.config = config
        self.run_id = run_id
        self.shared = shared
        self._parent = os.getppid() if shared else None
        self.channels: list[Channel] = []
        self.stop = threading.Event()

    def _attach(self, ch: Channel) -> Channel:
        self.channels.append(ch)
        return ch

    def recv(self, ch: Channel, view: bool = False):
        """Blocking receive that gives up if the launching process went away."""
        while True:
            try:
                return ch.recv_view(timeout=POLL_S) if view else ch.recv(timeout=POLL_S)
            except ChannelTimeout:
                if self.stop.is_set():
                    raise ShutdownRequested("stop requested") from None
                if self._parent is not None and os.getppid() != self._parent:
                    raise ShutdownRequested("controller process exited") from None

    def close(self):
        for ch in self.channels:
            ch.close()
        self.channels.clear()

    def run(self):
        raise NotImplementedError


def elapsed_ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def unexpected(frame: Frame, where: str) -> str:
    return f"{where}: unexpected {frame.kind.name} frame (sequence {frame.sequence})"
