"""Per-flow statistics and the CSV output contract.

Latency and drop statistics follow frames by their send time, so a drain
interval after the window lets in-flight frames resolve before the run
stops.  Throughput is a sink rate: it counts payload bits that arrive
inside the window, regardless of when their frames were sent.  Keying
throughput on send time instead would smear queue-depth differences at
the window edges into the rate.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from typing import Optional

from .kernel import PS_PER_US, SimTime

CSV_COLUMNS = ("scenario", "sweep_param", "sweep_value", "flow_id",
               "category", "avg_latency_us", "jitter_range_us", "stddev_us",
               "throughput_bps", "delivered", "dropped")

SYNC_COLUMNS = ("scenario", "t_us", "node", "error_us")


@dataclass(frozen=True)
class FlowMeta:
    flow_id: str
    category: str
    payload_bytes: int


@dataclass(frozen=True)
class FlowSummary:
    flow_id: str
    category: str
    delivered: int
    dropped: int
    avg_latency_ps: Optional[float]
    jitter_range_ps: Optional[int]
    stddev_ps: Optional[float]
    throughput_bps: float


def summarize(records, window: tuple[SimTime, SimTime],
              metas: list[FlowMeta]) -> dict[str, FlowSummary]:
    """Reduce delivery records to per-flow summaries over [t0, t1)."""
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("empty measurement window")
    lat: dict[str, list[int]] = {m.flow_id: [] for m in metas}
    drops: dict[str, int] = {m.flow_id: 0 for m in metas}
    arrived: dict[str, int] = {m.flow_id: 0 for m in metas}
    for r in records:
        if r.flow_id not in lat:
            continue
        if r.recv is not None and t0 <= r.recv < t1:
            arrived[r.flow_id] += 1
        if not t0 <= r.born < t1:
            continue
        if r.recv is None:
            drops[r.flow_id] += 1
        else:
            lat[r.flow_id].append(r.recv - r.born)
    out = {}
    for m in metas:
        ls = lat[m.flow_id]
        n = len(ls)
        if n:
            avg = sum(ls) / n
            rng = max(ls) - min(ls)
            sd = statistics.pstdev(ls) if n > 1 else 0.0
        else:
            avg = rng = sd = None
        thr = arrived[m.flow_id] * m.payload_bytes * 8 / ((t1 - t0) / 10**12)
        out[m.flow_id] = FlowSummary(m.flow_id, m.category, n,
                                     drops[m.flow_id], avg, rng, sd, thr)
    return out


def link_utilization(busy_ps: int, window_ps: SimTime) -> float:
    """Busy wire time (preamble/IFG included) as a fraction of the window."""
    if window_ps <= 0:
        raise ValueError("empty window")
    return busy_ps / window_ps


def _us(ps: Optional[float]) -> str:
    return "" if ps is None else f"{ps / PS_PER_US:.3f}"


def flow_rows(scenario: str, sweep_param: str, sweep_value,
              summaries: dict[str, FlowSummary]) -> list[tuple]:
    rows = []
    for s in summaries.values():
        rows.append((scenario, sweep_param, str(sweep_value), s.flow_id,
                     s.category, _us(s.avg_latency_ps), _us(s.jitter_range_ps),
                     _us(s.stddev_ps), f"{s.throughput_bps:.3f}",
                     str(s.delivered), str(s.dropped)))
    return rows


def write_flow_csv(path: str, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def write_sync_csv(path: str, rows: list[tuple]) -> None:
    """Rows: (scenario, t_ps, node, error_ps) -> microsecond columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SYNC_COLUMNS)
        for scenario, t_ps, node, err_ps in rows:
            w.writerow((scenario, f"{t_ps / PS_PER_US:.3f}", node,
                        f"{err_ps / PS_PER_US:.3f}"))
