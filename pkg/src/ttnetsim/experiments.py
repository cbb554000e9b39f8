"""Experiment drivers over a scenario: single runs with a measurement
window, offered-load sweeps, resynchronization-period sweeps, and per-node
clock-error traces.

A run executes the whole configured duration; statistics cover
[warmup, duration - drain) by frame send time, so startup transients and
frames still in flight at the end stay out of the numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

from .kernel import EventKind, SimTime
from .metrics import FlowMeta, FlowSummary, flow_rows, link_utilization, \
    summarize
from .netsim import Network, SimConfig
from .scenario import Scenario, parse_duration_ps
from .tte import eth_frame_duration, pcf_duration
from .ttcan import COUNTS_PER_NTU, wrap, wrap_signed
from .gateway import counts_of_ps_nominal

DEFAULT_UTILIZATION = tuple(range(10, 96, 5))
DEFAULT_PERIODS = ("1ms", "3ms", "10ms")


@dataclass
class RunResult:
    scenario: str
    seed: int
    duration_ps: SimTime
    window: tuple[SimTime, SimTime]
    summaries: dict[str, FlowSummary]
    sync_rows: list[tuple[SimTime, str, float]]   # (true t, node, error ps)
    utilization: dict[tuple[str, str], float]
    counters: dict[str, int]
    net: Network


def flow_metas(cfg: SimConfig) -> list[FlowMeta]:
    """Flows that produce end-to-end deliveries (encap links are transport
    for the CAN flows they carry, so they get no rows of their own)."""
    metas = [FlowMeta(f.flow_id, "tt", f.payload_bytes)
             for f in cfg.tt_flows if not f.encap]
    metas += [FlowMeta(f.flow_id, "rc", f.payload_bytes)
              for f in cfg.rc_flows]
    metas += [FlowMeta(f.flow_id, "be", f.payload_bytes)
              for f in cfg.be_flows]
    metas += [FlowMeta(f.flow_id, "ttcan", f.dlc)
              for b in cfg.buses for f in b.flows]
    return metas


def _default_margin(net: Network, cfg: SimConfig) -> SimTime:
    cycles = [net.cluster_ps]
    for b in cfg.buses:
        cycles.append(b.t_cycle_ntu * b.ntu_ps)
    if cfg.sync.resync_period_ps:
        cycles.append(cfg.sync.resync_period_ps)
    return 2 * max(cycles)


def run_single(sc: Scenario, *, seed: Optional[int] = None,
               duration: Optional[SimTime] = None, config=None,
               sample_sync: bool = False, trace: bool = False) -> RunResult:
    cfg = config if config is not None else sc.config
    seed = sc.seed if seed is None else seed
    duration = sc.duration_ps if duration is None else duration
    net = Network(cfg, seed=seed, trace=trace)
    margin = _default_margin(net, cfg)
    warmup = sc.warmup_ps if sc.warmup_ps is not None else margin
    drain = sc.drain_ps if sc.drain_ps is not None else margin
    if warmup + drain >= duration:
        raise ValueError(
            f"duration {duration} ps leaves no window after warmup "
            f"{warmup} ps and drain {drain} ps")
    sync_rows: list[tuple[SimTime, str, float]] = []
    if sample_sync:
        _arm_sync_sampler(net, sc.sync_sample_ps, sync_rows)
    net.run(duration)
    window = (warmup, duration - drain)
    # the probe also runs during warmup (handy when debugging a scenario);
    # reported rows cover the same window as the flow statistics
    sync_rows = [r for r in sync_rows if window[0] <= r[0] < window[1]]
    summaries = summarize(net.metrics.records, window, flow_metas(cfg))
    util: dict[tuple[str, str], float] = {}
    for (src, dst, _cls), busy in net.metrics.link_busy_ps.items():
        util[(src, dst)] = util.get((src, dst), 0.0) + busy
    util = {k: link_utilization(v, duration) for k, v in util.items()}
    return RunResult(sc.name, seed, duration, window, summaries, sync_rows,
                     util, dict(net.metrics.counters), net)


def _arm_sync_sampler(net: Network, period_ps: SimTime, rows: list):
    """Periodic read-only probe: every node's view of global time against
    the compression master's (true timeline when there is no backbone)."""
    cm = net._cm

    def sample(sim, ev):
        t = sim.now
        cm_ps = net.tte_clock[cm].local_ps(t) if cm is not None else t
        for name, clk in net.tte_clock.items():
            rows.append((t, name, float(clk.local_ps(t) - cm_ps)))
        for name, rt in net.can_nodes.items():
            ntu = rt.bus.cfg.ntu_ps
            g = wrap(rt.counter.local_time(t) + rt.state.local_offset)
            err = wrap_signed(g, wrap(counts_of_ps_nominal(cm_ps, ntu)))
            rows.append((t, name, err * ntu / COUNTS_PER_NTU))
        sim.schedule(t + period_ps, EventKind.GENERATOR_FIRE, "sync-trace",
                     sample)

    net.sim.schedule(period_ps, EventKind.GENERATOR_FIRE, "sync-trace",
                     sample)


# ---------------------------------------------------------------------------
# Offered-load sweep
# ---------------------------------------------------------------------------

def _crosses(tree: dict, a: str, b: str) -> bool:
    return b in tree.get(a, ())


def _be_path_crosses(net: Network, src: str, dst: str, a: str, b: str) -> bool:
    at = src
    seen = set()
    while at != dst and at not in seen:
        seen.add(at)
        nxt = net.be_next_hop.get((at, dst))
        if nxt is None:
            return False
        if at == a and nxt == b:
            return True
        at = nxt
    return False


def offered_load(net: Network, cfg: SimConfig,
                 bottleneck: tuple[str, str]) -> tuple[Fraction, Fraction]:
    """(fixed, variable) offered wire-time fractions on the bottleneck:
    fixed covers TT slots and sync traffic, variable the RC+BE flows the
    sweep rescales."""
    a, b = bottleneck
    rate = net.links[(a, b)].rate_bps
    fixed = Fraction(0)
    for f in cfg.tt_flows:
        if _crosses(net.vl_routes[f"vl:{f.flow_id}"], a, b):
            fixed += Fraction(
                len(f.offsets_ps) * eth_frame_duration(f.payload_bytes, rate),
                f.period_ps)
    P = cfg.sync.integration_period_ps
    pcf = pcf_duration(rate)
    n_pcf = sum(_crosses(net._pcf_route_up[n.name], a, b)
                for n in cfg.nodes if n.name in net._pcf_route_up)
    n_pcf += _crosses(net._pcf_route_down, a, b)
    fixed += Fraction(n_pcf * pcf, P)
    var = Fraction(0)
    for f in cfg.rc_flows:
        if _crosses(net.vl_routes[f"vl:{f.flow_id}"], a, b):
            var += Fraction(eth_frame_duration(f.payload_bytes, rate),
                            f.period_ps)
    for f in cfg.be_flows:
        if _be_path_crosses(net, f.src, f.dst, a, b):
            var += Fraction(eth_frame_duration(f.payload_bytes, rate),
                            f.period_ps)
    return fixed, var


def scale_config_to_utilization(sc: Scenario, target_pct) -> SimConfig:
    """Rescale every RC bag/period and BE period by one factor so the
    bottleneck link's offered wire utilization hits target_pct."""
    if sc.bottleneck is None:
        raise ValueError("scenario has no bottleneck directive")
    cfg = sc.config
    net = Network(cfg)              # routing only; never run
    fixed, var = offered_load(net, cfg, sc.bottleneck)
    if var == 0:
        raise ValueError("no RC/BE flow crosses the bottleneck link")
    target = Fraction(target_pct) / 100
    needed = target - fixed
    if needed <= 0:
        raise ValueError(
            f"utilization {target_pct}% is below the fixed schedule load "
            f"{float(fixed):.3f}")
    slowdown = var / needed         # periods stretch when load drops
    rc = tuple(replace(f, period_ps=max(1, int(f.period_ps * slowdown)),
                       bag_ps=max(1, int(f.bag_ps * slowdown)))
               for f in cfg.rc_flows)
    be = tuple(replace(f, period_ps=max(1, int(f.period_ps * slowdown)))
               for f in cfg.be_flows)
    return replace(cfg, rc_flows=rc, be_flows=be)


def experiment_fig6(sc: Scenario, sweep=None, *, seed: Optional[int] = None,
                    duration: Optional[SimTime] = None):
    """Latency/jitter/throughput vs offered load; returns (csv_rows,
    results) keyed in sweep order."""
    values = [int(v) for v in (sweep or sc.sweep.get("utilization")
                               or DEFAULT_UTILIZATION)]
    rows, results = [], []
    for pct in values:
        cfg = scale_config_to_utilization(sc, pct)
        res = run_single(sc, seed=seed, duration=duration, config=cfg)
        rows += flow_rows(sc.name, "utilization", pct, res.summaries)
        results.append((pct, res))
    return rows, results


def experiment_fig7(sc: Scenario, sweep=None, *, seed: Optional[int] = None,
                    duration: Optional[SimTime] = None):
    """Sweep the backbone resynchronization period; sync overhead scales
    inversely, which shows up as best-effort throughput loss."""
    tokens = list(sweep or sc.sweep.get("integration_period")
                  or DEFAULT_PERIODS)
    rows, results = [], []
    for tok in tokens:
        period = parse_duration_ps(str(tok))
        cfg = replace(sc.config,
                      sync=replace(sc.config.sync,
                                   integration_period_ps=period))
        res = run_single(sc, seed=seed, duration=duration, config=cfg)
        rows += flow_rows(sc.name, "integration_period", tok, res.summaries)
        results.append((tok, res))
    return rows, results


def experiment_sync_trace(sc: Scenario, *, seed: Optional[int] = None,
                          duration: Optional[SimTime] = None) -> RunResult:
    return run_single(sc, seed=seed, duration=duration, sample_sync=True)
