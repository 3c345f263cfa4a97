"""Deterministic discrete-event simulation of the wireless links.

One virtual tick = 1 ms.  A single seeded RNG drives loss and jitter, so
(config, seed) fully determines the event log.  Frames are fire-and-forget:
the sender is never told about a drop; reliability belongs to the layers
above.
"""

from __future__ import annotations

import heapq
import random
import struct
from dataclasses import dataclass

from .wire import TYPE_NAMES


@dataclass
class LinkModel:
    latency: int = 2          # base ticks, >= 1
    jitter: int = 0           # uniform extra ticks in [0, jitter]
    loss: float = 0.0         # drop probability in [0, 1]

    def __post_init__(self):
        if self.latency < 1:
            raise ValueError("latency must be >= 1 tick")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss probability out of range")


@dataclass
class EnergyModel:
    tx_cost_j: float = 0.0    # per frame sent
    rx_cost_j: float = 0.0    # per frame received
    idle_cost_j_per_tick: float = 0.0


@dataclass
class DutyCycle:
    on_ticks: int
    off_ticks: int
    phase: int = 0

    def __post_init__(self):
        if self.on_ticks + self.off_ticks <= 0:
            raise ValueError("empty duty cycle period")

    def awake_at(self, t: int) -> bool:
        period = self.on_ticks + self.off_ticks
        return (t - self.phase) % period < self.on_ticks

    def awake_ticks_between(self, t0: int, t1: int) -> int:
        """Number of awake ticks in [t0, t1)."""
        def upto(t):
            q, r = divmod(t - self.phase, self.on_ticks + self.off_ticks)
            return q * self.on_ticks + min(r, self.on_ticks)
        return upto(t1) - upto(t0)


class Event:
    __slots__ = ("time", "seq", "fn", "cancelled")

    def __init__(self, time, seq, fn):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.cancelled = False

    def cancel(self):
        self.cancelled = True

    def __lt__(self, other):
        return (self.time, self.seq) < (other.time, other.seq)


class EventLog:
    """Tab-separated trace: tick, event, src, dst, detail."""

    def __init__(self):
        self.lines = []

    def add(self, tick, event, src, dst, detail=""):
        self.lines.append("%d\t%s\t%s\t%s\t%s" % (tick, event, src, dst, detail))

    def text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.text())


def _frame_summary(frame: bytes) -> str:
    if len(frame) >= 7:
        code, tag = struct.unpack("<BH", frame[4:7])
        return "%s tag=%d" % (TYPE_NAMES.get(code, "?%d" % code), tag)
    return "short"


class Network:
    """Event queue plus endpoint registry and per-pair link models."""

    def __init__(self, seed: int = 0, energy: EnergyModel = None,
                 default_link: LinkModel = None):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self.energy = energy or EnergyModel()
        self.default_link = default_link or LinkModel()
        self.links = {}        # (src, dst) -> LinkModel
        self.handlers = {}     # endpoint id -> fn(src, frame)
        self.states = {}       # endpoint id -> SensorState (energy-modeled)
        self.log = EventLog()
        self._heap = []
        self._seq = 0

    # -- endpoints ------------------------------------------------------

    def register(self, eid, handler, state=None):
        if eid in self.handlers:
            raise ValueError("duplicate endpoint %r" % eid)
        self.handlers[eid] = handler
        if state is not None:
            state.attach_network(self, eid)
            self.states[eid] = state

    def link_for(self, src, dst) -> LinkModel:
        return self.links.get((src, dst), self.default_link)

    def set_link(self, src, dst, model: LinkModel, both_ways=False):
        self.links[(src, dst)] = model
        if both_ways:
            self.links[(dst, src)] = model

    # -- scheduling -------------------------------------------------------

    def schedule(self, delay, fn) -> Event:
        ev = Event(self.now + delay, self._seq, fn)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def step(self) -> bool:
        while self._heap:
            ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.now = ev.time
            ev.fn()
            return True
        return False

    def peek_time(self):
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].time if self._heap else None

    def run_until(self, t):
        if t < self.now:
            raise ValueError("time cannot decrease")
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > t:
                break
            self.step()
        self.now = t

    def run_until_idle(self, max_events=1_000_000):
        n = 0
        while self.step():
            n += 1
            if n >= max_events:
                raise RuntimeError("simulation did not go idle")

    # -- the wireless channel ---------------------------------------------

    def send(self, src, dst, frame: bytes):
        """Schedule delivery of one frame, or drop it silently."""
        if dst not in self.handlers:
            raise ValueError("unknown endpoint %r" % dst)
        summary = _frame_summary(frame)
        state = self.states.get(src)
        if state is not None and not state.charge(self.now, self.energy.tx_cost_j, "tx"):
            self.log.add(self.now, "txfail", src, dst, summary)
            return
        self.log.add(self.now, "send", src, dst, summary)
        link = self.link_for(src, dst)
        if link.loss > 0.0 and self.rng.random() < link.loss:
            self.log.add(self.now, "drop", src, dst, summary)
            return
        latency = link.latency
        if link.jitter:
            latency += self.rng.randint(0, link.jitter)
        self.schedule(latency, lambda: self._deliver(src, dst, frame, summary))

    def _deliver(self, src, dst, frame, summary):
        state = self.states.get(dst)
        if state is not None:
            if not state.is_awake(self.now):
                self.log.add(self.now, "sleepdrop", src, dst, summary)
                return
            if not state.charge(self.now, self.energy.rx_cost_j, "rx"):
                self.log.add(self.now, "rxfail", src, dst, summary)
                return
        self.log.add(self.now, "deliver", src, dst, summary)
        self.handlers[dst](src, frame)
