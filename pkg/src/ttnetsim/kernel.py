"""Deterministic discrete-event core.

All simulation time is an integer count of picoseconds (SimTime).  Events fire
in (time, kind priority, sequence) order, so two runs of the same scenario and
seed replay the exact same event order.  Every stochastic draw in a run comes
from the single `Simulator.rng` instance; draw order is documented where draws
happen (node init in scenario order, then per-event draws in event order).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

SimTime = int  # picoseconds

# Duration constants (picoseconds).
PS_PER_NS = 1_000
PS_PER_US = 1_000_000
PS_PER_MS = 1_000_000_000
PS_PER_S = 1_000_000_000_000


def us(x: float) -> SimTime:
    """Microseconds to SimTime. Exact for integers and common decimals."""
    return round(x * PS_PER_US)


def ms(x: float) -> SimTime:
    return round(x * PS_PER_MS)


def fmt_us(t: SimTime) -> str:
    """Render a SimTime as microseconds with ps resolution kept."""
    return f"{t / PS_PER_US:.6f}"


class EventKind(Enum):
    # Declaration order is tie-break priority at equal fire times.
    WINDOW_OPEN = "window-open"
    PCF_DISPATCH = "pcf-dispatch"
    CYCLE_END = "cycle-end"
    FRAME_ARRIVAL = "frame-arrival"
    GENERATOR_FIRE = "generator-fire"


_PRIORITY = {kind: i for i, kind in enumerate(EventKind)}


class SimulationError(RuntimeError):
    """Raised for simulation bugs, e.g. scheduling an event in the past."""


@dataclass
class Event:
    fire_at: SimTime
    kind: EventKind
    node: str
    handler: Callable[["Simulator", "Event"], None]
    payload: Any = None
    seq: int = 0
    cancelled: bool = False


@dataclass
class EventTrace:
    """Replay record: one (ticks, node, kind) row per dispatched event."""

    entries: list[tuple[SimTime, str, str]] = field(default_factory=list)

    def to_text(self) -> str:
        return "".join(f"{t},{node},{kind}\n" for t, node, kind in self.entries)

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


class Simulator:
    """Event queue + clock + run RNG for one simulation run."""

    def __init__(self, seed: int = 0, trace: bool = False):
        self.now: SimTime = 0
        self.rng = random.Random(seed)
        self.seed = seed
        self._heap: list[tuple[SimTime, int, int]] = []
        self._events: dict[int, Event] = {}
        self._next_seq = 0
        self.trace: Optional[EventTrace] = EventTrace() if trace else None
        self.processed = 0

    def schedule(self, fire_at: SimTime, kind: EventKind, node: str,
                 handler: Callable[["Simulator", Event], None],
                 payload: Any = None) -> int:
        """Queue an event; returns an id usable with cancel()."""
        if fire_at < self.now:
            raise SimulationError(
                f"event {kind.value}@{node} scheduled at {fire_at} ps, "
                f"before now={self.now} ps")
        seq = self._next_seq
        self._next_seq += 1
        ev = Event(fire_at, kind, node, handler, payload, seq)
        self._events[seq] = ev
        heapq.heappush(self._heap, (fire_at, _PRIORITY[kind], seq))
        return seq

    def cancel(self, event_id: int) -> bool:
        """Cancel a pending event. True if it was still pending."""
        ev = self._events.get(event_id)
        if ev is None or ev.cancelled:
            return False
        ev.cancelled = True
        return True

    def run_until(self, t_end: SimTime) -> None:
        """Process every event with fire_at <= t_end, then set now = t_end."""
        heap = self._heap
        events = self._events
        trace = self.trace
        while heap and heap[0][0] <= t_end:
            fire_at, _prio, seq = heapq.heappop(heap)
            ev = events.pop(seq)
            if ev.cancelled:
                continue
            self.now = fire_at
            if trace is not None:
                trace.entries.append((fire_at, ev.node, ev.kind.value))
            ev.handler(self, ev)
            self.processed += 1
        self.now = t_end

    def pending(self) -> int:
        return sum(1 for e in self._events.values() if not e.cancelled)
