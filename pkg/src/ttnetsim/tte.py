"""Time-triggered Ethernet: frame timing, traffic classes, virtual links,
two-step sync primitives, and the corrected local clock.

Traffic priority on every egress is PCF > TT > RC > BE; protocol control
frames outrank everything but nothing preempts a frame already on the wire.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .kernel import SimTime
from .clocks import TickClock

ETH_HEADER_BYTES = 18     # MAC header + FCS
ETH_MIN_FRAME_BYTES = 64
ETH_WIRE_EXTRA_BYTES = 20  # preamble + SFD + interframe gap
ETH_MAX_PAYLOAD_BYTES = 1500
PCF_FRAME_BYTES = 64       # fixed-size control frame
PCF_PAYLOAD_BYTES = PCF_FRAME_BYTES - ETH_HEADER_BYTES


class TteConfigError(ValueError):
    """Static TT-Ethernet configuration problem."""


class TrafficClass(Enum):
    TT = "tt"
    RC = "rc"
    BE = "be"


def eth_frame_duration(payload_bytes: int, link_rate_bps: int) -> SimTime:
    """Wire time of one frame: padded to 64 B, plus preamble and IFG."""
    if payload_bytes < 0 or payload_bytes > ETH_MAX_PAYLOAD_BYTES:
        raise TteConfigError(
            f"payload {payload_bytes} B outside 0..{ETH_MAX_PAYLOAD_BYTES}")
    frame = max(payload_bytes + ETH_HEADER_BYTES, ETH_MIN_FRAME_BYTES)
    bits = (frame + ETH_WIRE_EXTRA_BYTES) * 8
    return round(bits * Fraction(10**12, link_rate_bps))


def pcf_duration(link_rate_bps: int) -> SimTime:
    return eth_frame_duration(PCF_PAYLOAD_BYTES, link_rate_bps)


def cluster_cycle(periods, integration_period_ps: int) -> SimTime:
    """LCM of the message periods; each must be a multiple of the
    integration period, so the result is too."""
    if integration_period_ps <= 0:
        raise TteConfigError("integration period must be positive")
    out = integration_period_ps
    for p in sorted(periods):
        if p <= 0 or p % integration_period_ps:
            raise TteConfigError(
                f"period {p} ps is not a positive multiple of the "
                f"integration period {integration_period_ps} ps")
        out = math.lcm(out, p)
    return out


# ---------------------------------------------------------------------------
# Frames and virtual links
# ---------------------------------------------------------------------------

class SyncRole(Enum):
    CM = "cm"  # compression master (a switch)
    SM = "sm"  # sync master (end system / gateway)
    SC = "sc"  # sync client


@dataclass
class PcfFrame:
    """Protocol control frame. step 1: SM -> CM, step 2: CM -> all.

    transparent_delay_ps accumulates measured switch residence so receivers
    can subtract queueing; the sender's own hand-off delay is not included.
    """

    sender: str
    ic_index: int
    step: int
    sent_local_ps: int = 0
    transparent_delay_ps: int = 0


@dataclass
class EthFrame:
    vl_id: str
    traffic_class: TrafficClass
    payload_bytes: int
    src: str
    dst: str = ""              # BE frames route by destination
    flow_id: str = ""
    seq: int = -1
    born: SimTime = 0
    tuples: tuple = ()         # encapsulated CAN frames, gateway VLs
    pcf: Optional[PcfFrame] = None
    enqueued_at: SimTime = 0   # set per hop, feeds the transparent clock


@dataclass(frozen=True)
class VirtualLink:
    """Unidirectional multicast stream with a static route tree."""

    vl_id: str
    sender: str
    receivers: tuple[str, ...]
    traffic_class: TrafficClass
    payload_bytes: int
    period_ps: int = 0                       # TT: schedule repeat period
    schedule: tuple[tuple[int, int], ...] = ()  # (cycle idx, offset ps) pairs
    bag_ps: int = 0                          # RC: minimum admission spacing

    def __post_init__(self):
        if self.traffic_class is TrafficClass.TT and not self.schedule:
            raise TteConfigError(f"TT vl {self.vl_id} needs a dispatch schedule")
        if self.traffic_class is TrafficClass.RC and self.bag_ps <= 0:
            raise TteConfigError(f"RC vl {self.vl_id} needs a positive bag")


def expand_tt_schedule(period_ps: int, offsets_ps, integration_period_ps: int,
                       cluster_ps: int) -> tuple[tuple[int, int], ...]:
    """Expand (period, offsets-within-period) into per-integration-cycle
    (cycle index, instant within cycle) entries over one cluster cycle."""
    if cluster_ps % period_ps:
        raise TteConfigError("cluster cycle must be a multiple of the period")
    entries = []
    for k in range(cluster_ps // period_ps):
        for off in offsets_ps:
            if not 0 <= off < period_ps:
                raise TteConfigError(f"dispatch offset {off} outside the period")
            t = k * period_ps + off
            entries.append((t // integration_period_ps,
                            t % integration_period_ps))
    return tuple(sorted(entries))


# ---------------------------------------------------------------------------
# Static routing
# ---------------------------------------------------------------------------

def build_route_tree(adjacency: dict[str, tuple[str, ...]], sender: str,
                     receivers: tuple[str, ...]) -> dict[str, tuple[str, ...]]:
    """Multicast tree as a map node -> egress neighbours, the union of
    shortest paths from sender to each receiver (BFS, lexicographic
    tie-break so routes are reproducible)."""
    if sender not in adjacency:
        raise TteConfigError(f"unknown sender {sender}")
    parent: dict[str, str] = {sender: sender}
    frontier = [sender]
    while frontier:
        nxt = []
        for node in frontier:
            for nb in sorted(adjacency[node]):
                if nb not in parent:
                    parent[nb] = node
                    nxt.append(nb)
        frontier = nxt
    tree: dict[str, set[str]] = {}
    for r in receivers:
        if r not in parent:
            raise TteConfigError(f"receiver {r} unreachable from {sender}")
        if r == sender:
            raise TteConfigError(f"vl sender {sender} cannot be a receiver")
        node = r
        while node != sender:
            up = parent[node]
            tree.setdefault(up, set()).add(node)
            node = up
    return {n: tuple(sorted(hops)) for n, hops in tree.items()}


# ---------------------------------------------------------------------------
# RC shaping
# ---------------------------------------------------------------------------

class RcShaper:
    """Bandwidth allocation gap: admission = max(now, last admission + bag)."""

    __slots__ = ("bag_ps", "last_admission")

    def __init__(self, bag_ps: int):
        if bag_ps <= 0:
            raise TteConfigError("bag must be positive")
        self.bag_ps = bag_ps
        self.last_admission: Optional[SimTime] = None

    def admit(self, now: SimTime) -> SimTime:
        t = now if self.last_admission is None else max(
            now, self.last_admission + self.bag_ps)
        self.last_admission = t
        return t


# ---------------------------------------------------------------------------
# Two-step sync arithmetic
# ---------------------------------------------------------------------------

def cm_compress(arrival_offsets_ticks: list[int]) -> int:
    """Compression: arithmetic mean of relative PCF arrivals, in CM ticks
    (round half up).  Empty set means no correction this cycle."""
    if not arrival_offsets_ticks:
        raise ValueError("no PCF arrivals to compress")
    mean = Fraction(sum(arrival_offsets_ticks), len(arrival_offsets_ticks))
    return math.floor(mean + Fraction(1, 2))


def receiver_correction_ticks(arrival_local_ticks: int,
                              expected_local_ticks: int) -> int:
    """Offset a receiver applies after the second sync step: the negated
    local arrival error of the compressed PCF."""
    return expected_local_ticks - arrival_local_ticks


# ---------------------------------------------------------------------------
# Corrected local clock (tick-quantized)
# ---------------------------------------------------------------------------

class TteClockSim:
    """Node-local corrected clock: oscillator tick counter plus a correction
    offset in whole ticks.  Local time is quantized at t_sys; sync corrections
    slew the offset and never schedule a boundary in the past (callers clamp
    by scheduling `max(target, now)`)."""

    __slots__ = ("t_sys_ps", "ticks", "offset_ticks", "integration_period_ps")

    def __init__(self, t_sys_ps: int, drift_ppm, integration_period_ps: int,
                 phase_rem: int = 0):
        if integration_period_ps % t_sys_ps:
            raise TteConfigError(
                "integration period must be a whole number of clock ticks")
        self.t_sys_ps = t_sys_ps
        self.integration_period_ps = integration_period_ps
        self.ticks = TickClock(t_sys_ps, drift_ppm, phase_rem=phase_rem)
        self.offset_ticks = 0

    def local_ticks(self, t: SimTime) -> int:
        return self.ticks.ticks_at(t) + self.offset_ticks

    def local_ps(self, t: SimTime) -> int:
        return self.local_ticks(t) * self.t_sys_ps

    def local_ps_fine(self, t: SimTime) -> int:
        """Local time with sub-tick interpolation (timestamping unit).

        Reading the bare tick counter floors every arrival timestamp, which
        puts a half-tick one-sided error on measured offsets; a gain-one
        correction loop integrates that bias into a permanent frequency
        walk of the whole cluster.  Interpolating inside the current tick
        keeps offset measurements unbiased.  Corrections stay whole ticks.
        """
        c = self.ticks
        dt = t - c.anchor_true
        if dt < 0:
            raise ValueError("querying before clock anchor")
        total = c.anchor_rem + dt * c.q
        whole, rem = divmod(total, c.p)
        base = (c.anchor_ticks + whole + self.offset_ticks) * self.t_sys_ps
        return base + rem * self.t_sys_ps // c.p

    def true_when_local_ps(self, local_ps: int) -> SimTime:
        """True instant at which the corrected clock first reads local_ps."""
        target_ticks = -(-local_ps // self.t_sys_ps)
        return self.ticks.true_of_tick(target_ticks - self.offset_ticks)

    def apply_correction(self, delta_ticks: int) -> None:
        self.offset_ticks += delta_ticks

    def quantize_duration(self, dt_ps: int) -> int:
        """Duration measured by this clock's tick counter (floor)."""
        return dt_ps // self.t_sys_ps * self.t_sys_ps
