"""Runtime assembly: wires clocks, links, switches, end systems, CAN buses,
and gateways onto the event kernel.

All protocol state machines live here; the arithmetic they delegate to sits
in clocks/ttcan/tte/gateway.  Every timed action is driven by some node's
*local* clock (converted to true time through the exact inverse maps), so
drift and correction effects propagate honestly into every metric.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from .kernel import EventKind, SimTime, Simulator
from . import tte
from .tte import (
    EthFrame,
    PcfFrame,
    RcShaper,
    SyncRole,
    TrafficClass,
    TteClockSim,
    TteConfigError,
    VirtualLink,
    build_route_tree,
    cm_compress,
    eth_frame_duration,
    expand_tt_schedule,
    pcf_duration,
)
from . import ttcan
from .ttcan import (
    COUNTS_PER_NTU,
    CanConfigError,
    CanFrame,
    NtuCounter,
    ReferenceMessage,
    SystemMatrix,
    TimeWindow,
    TtcanNodeState,
    WindowKind,
    can_frame_duration,
    capture_sync_mark,
    drift_factor,
    wrap,
    wrap_forward,
)
from .gateway import (
    EncapTuple,
    MasterSyncState,
    SlaveSyncState,
    counts_of_ps_nominal,
    master_cycle_resync,
    select_for_encap,
    slave_on_reference,
)

# ---------------------------------------------------------------------------
# Configuration schema (produced by the scenario layer)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeCfg:
    name: str
    kind: str                 # es | switch | gateway
    role: SyncRole
    t_sys_ps: int
    drift_ppm: Fraction = Fraction(0)


@dataclass(frozen=True)
class LinkCfg:
    a: str
    b: str
    rate_bps: int = 100_000_000
    prop_ps: int = 0


@dataclass(frozen=True)
class TtFlowCfg:
    flow_id: str
    sender: str
    receivers: tuple[str, ...]
    payload_bytes: int
    period_ps: int
    offsets_ps: tuple[int, ...]      # dispatch instants within the period
    encap: bool = False              # gateway-fed: empty slots are skipped


@dataclass(frozen=True)
class RcFlowCfg:
    flow_id: str
    sender: str
    receivers: tuple[str, ...]
    payload_bytes: int
    period_ps: int
    bag_ps: int
    offset_ps: int = 0


@dataclass(frozen=True)
class BeFlowCfg:
    flow_id: str
    src: str
    dst: str
    payload_bytes: int
    period_ps: int
    offset_ps: int = 0


@dataclass(frozen=True)
class CanWindowCfg:
    kind: WindowKind
    start_ntu: int
    length_ntu: int
    owner: Optional[int] = None      # CAN id for exclusive windows


@dataclass(frozen=True)
class CanNodeCfg:
    name: str
    t_sys_ps: int
    drift_ppm: Fraction = Fraction(0)
    tur: Fraction = Fraction(16)
    mode: str = "slave"              # standalone_master | slave | gateway


@dataclass(frozen=True)
class CanFlowCfg:
    flow_id: str
    can_id: int
    src: str
    dest: str
    dlc: int
    period_ps: int
    offset_ps: int = 0


@dataclass(frozen=True)
class BusCfg:
    name: str
    bitrate_bps: int
    ntu_ps: int                      # nominal NTU duration
    t_cycle_ntu: int
    ref_window_ntu: int
    rows: tuple[tuple[CanWindowCfg, ...], ...]
    nodes: tuple[CanNodeCfg, ...]
    flows: tuple[CanFlowCfg, ...]
    prop_ps: int = 0
    frame_mode: str = "nominal"      # nominal | worst (bit stuffing)


@dataclass(frozen=True)
class SyncCfg:
    integration_period_ps: int
    collection_margin_ps: int = 20_000_000   # after the slowest static path
    guard_margin_ps: int = 2_000_000         # lower-class fit safety margin
    be_queue_cap: int = 64
    smoothing: Fraction = Fraction(1)
    resync_period_ps: int = 0                # 0: one gateway basic cycle


@dataclass(frozen=True)
class SimConfig:
    nodes: tuple[NodeCfg, ...]
    links: tuple[LinkCfg, ...]
    sync: SyncCfg
    tt_flows: tuple[TtFlowCfg, ...] = ()
    rc_flows: tuple[RcFlowCfg, ...] = ()
    be_flows: tuple[BeFlowCfg, ...] = ()
    buses: tuple[BusCfg, ...] = ()


# ---------------------------------------------------------------------------
# Metrics capture
# ---------------------------------------------------------------------------

@dataclass
class FlowRecord:
    flow_id: str
    category: str        # tt | rc | be | ttcan
    seq: int
    born: SimTime
    recv: Optional[SimTime]
    receiver: str


class Metrics:
    """Append-only capture; reduction happens in the metrics module."""

    def __init__(self):
        self.records: list[FlowRecord] = []
        self.drops: dict[str, int] = {}
        self.counters: dict[str, int] = {}
        self.sync_rows: list[tuple[SimTime, str, str, int]] = []
        self.link_busy_ps: dict[tuple[str, str, str], int] = {}

    def delivered(self, flow_id, category, seq, born, recv, receiver):
        self.records.append(FlowRecord(flow_id, category, seq, born, recv,
                                       receiver))

    def dropped(self, flow_id, category, seq, born):
        self.records.append(FlowRecord(flow_id, category, seq, born, None, ""))
        self.drops[flow_id] = self.drops.get(flow_id, 0) + 1

    def bump(self, key, n=1):
        self.counters[key] = self.counters.get(key, 0) + n

    def sync_sample(self, t, node, kind, value):
        self.sync_rows.append((t, node, kind, value))

    def busy(self, link_key, category, dur):
        k = (*link_key, category)
        self.link_busy_ps[k] = self.link_busy_ps.get(k, 0) + dur


# ---------------------------------------------------------------------------
# Directed Ethernet link with class-priority egress
# ---------------------------------------------------------------------------

class Link:
    """One direction of a full-duplex link.  PCF > TT > RC > BE; no
    preemption; RC/BE start only if they finish ahead of the next protected
    TT instant (sender-local time) with a safety margin."""

    def __init__(self, net: "Network", src: str, dst: str, rate_bps: int,
                 prop_ps: int):
        self.net = net
        self.src = src
        self.dst = dst
        self.rate_bps = rate_bps
        self.prop_ps = prop_ps
        self.key = (src, dst)
        self.busy_until: SimTime = 0
        self.q = {c: deque() for c in ("pcf", "tt", "rc", "be")}
        self.guard_starts: list[int] = []   # protected starts, local ps
        self.guard_wires: list[int] = []    # wire time of each protected slot
        self.cluster_ps: int = 0
        self.retry_pending = False

    # -- guard table ---------------------------------------------------

    def set_guard_table(self, entries: list[tuple[int, int]], cluster_ps: int):
        entries = sorted(entries)
        self.guard_starts = [e[0] for e in entries]
        self.guard_wires = [e[1] for e in entries]
        self.cluster_ps = cluster_ps

    def _next_protected(self, local_ps: int) -> Optional[tuple[int, int]]:
        if not self.guard_starts:
            return None
        pos = local_ps % self.cluster_ps
        base = local_ps - pos
        i = bisect.bisect_left(self.guard_starts, pos)
        # a slot stays protected until its window drains: the owning
        # dispatch can trail the nominal start by tick rounding plus a
        # clock correction, so "just past the start" is not "free"
        if i and self.guard_starts[i - 1] + self.guard_wires[i - 1] > pos:
            i -= 1
        elif i == 0 and (self.guard_starts[-1] + self.guard_wires[-1]
                         > pos + self.cluster_ps):
            return (base - self.cluster_ps + self.guard_starts[-1],
                    self.guard_wires[-1])
        if i == len(self.guard_starts):
            return (base + self.cluster_ps + self.guard_starts[0],
                    self.guard_wires[0])
        return base + self.guard_starts[i], self.guard_wires[i]

    # -- queueing ------------------------------------------------------

    def enqueue(self, frame: EthFrame, cls: str):
        now = self.net.sim.now
        if cls == "be" and len(self.q["be"]) >= self.net.cfg.sync.be_queue_cap:
            self.net.metrics.dropped(frame.flow_id, "be", frame.seq, frame.born)
            self.net.metrics.bump(f"be_drop:{self.src}->{self.dst}")
            return
        frame.enqueued_at = now
        self.q[cls].append(frame)
        self.kick(now)

    def kick(self, now: SimTime):
        if now < self.busy_until:
            return
        if self.q["pcf"]:
            self._send(self.q["pcf"].popleft(), "pcf", now)
            return
        if self.q["tt"]:
            self._send(self.q["tt"].popleft(), "tt", now)
            return
        for cls in ("rc", "be"):
            if not self.q[cls]:
                continue
            frame = self.q[cls][0]
            wire = eth_frame_duration(frame.payload_bytes, self.rate_bps)
            if self._fits(now, wire):
                self.q[cls].popleft()
                self._send(frame, cls, now)
            else:
                self._schedule_retry(now)
            return  # a queued RC blocks BE even when the RC is held

    def _fits(self, now: SimTime, wire_ps: int) -> bool:
        local = self.net.tte_clock[self.src].local_ps(now)
        nxt = self._next_protected(local)
        if nxt is None:
            return True
        start, _ = nxt
        return local + wire_ps + self.net.cfg.sync.guard_margin_ps <= start

    def _schedule_retry(self, now: SimTime):
        if self.retry_pending:
            return
        local = self.net.tte_clock[self.src].local_ps(now)
        nxt = self._next_protected(local)
        if nxt is None:
            return
        start, wire = nxt
        clk = self.net.tte_clock[self.src]
        target = max(now + 1, clk.true_when_local_ps(start + wire))
        self.retry_pending = True
        self.net.sim.schedule(target, EventKind.FRAME_ARRIVAL,
                              f"{self.src}->{self.dst}", self._retry)

    def _retry(self, sim, ev):
        self.retry_pending = False
        self.kick(sim.now)

    def _send(self, frame: EthFrame, cls: str, now: SimTime):
        wire = eth_frame_duration(frame.payload_bytes, self.rate_bps)
        if frame.pcf is not None and self.net.nodes[self.src].kind == "switch":
            # Transparent clock: switch residence measured on the raw
            # (uncorrected) oscillator, charged to the frame.
            clk = self.net.tte_clock[self.src]
            held = (clk.ticks.ticks_at(now)
                    - clk.ticks.ticks_at(frame.enqueued_at)) * clk.t_sys_ps
            frame.pcf.transparent_delay_ps += held
        self.busy_until = now + wire
        self.net.metrics.busy(self.key, cls, wire)
        self.net.sim.schedule(self.busy_until, EventKind.FRAME_ARRIVAL,
                              f"{self.src}->{self.dst}", self._free)
        self.net.sim.schedule(self.busy_until + self.prop_ps,
                              EventKind.FRAME_ARRIVAL, self.dst,
                              self.net._on_eth_arrival, payload=(frame, self))

    def _free(self, sim, ev):
        self.kick(sim.now)


# ---------------------------------------------------------------------------
# Per-node runtime state
# ---------------------------------------------------------------------------

@dataclass
class TteNode:
    cfg: NodeCfg
    kind: str
    role: SyncRole
    # TT dispatch entries: (cycle index within cluster, offset ps, flow)
    tt_entries: dict[int, list[tuple[int, "FlowRt"]]] = field(default_factory=dict)
    pending_encap: deque = field(default_factory=deque)


@dataclass
class FlowRt:
    cfg: object
    vl: Optional[VirtualLink]
    category: str
    seq: int = 0
    shaper: Optional[RcShaper] = None


class CanNodeRt:
    """One CAN bus station (possibly the gateway's bus-side half)."""

    def __init__(self, cfg: CanNodeCfg, bus: "BusRt", counter: NtuCounter):
        self.cfg = cfg
        self.bus = bus
        self.counter = counter
        self.state = TtcanNodeState()
        self.slave_sync = SlaveSyncState(tur=cfg.tur)
        self.pending: deque[CanFrame] = deque()
        self.owned_ids: set[int] = set()
        self.uses_arbitration = False
        self.cycle_index = 0


class BusRt:
    def __init__(self, cfg: BusCfg, matrix: SystemMatrix):
        self.cfg = cfg
        self.matrix = matrix
        self.nodes: list[CanNodeRt] = []
        self.busy_until: SimTime = 0
        self.current: Optional[tuple[CanFrame, SimTime, SimTime]] = None
        self.arb_contenders: list[tuple[CanFrame, CanNodeRt]] = []
        self.arb_resolve_at: Optional[SimTime] = None
        self.bit_ps = 10**12 // cfg.bitrate_bps

    def frame_duration(self, dlc: int) -> SimTime:
        return can_frame_duration(dlc, self.cfg.bitrate_bps,
                                  self.cfg.frame_mode)


# ---------------------------------------------------------------------------
# The network
# ---------------------------------------------------------------------------

class Network:
    """Builds all runtime objects from a SimConfig and runs the scenario."""

    def __init__(self, cfg: SimConfig, seed: int = 0, trace: bool = False):
        self.cfg = cfg
        self.sim = Simulator(seed=seed, trace=trace)
        self.metrics = Metrics()
        self.nodes: dict[str, TteNode] = {}
        self.tte_clock: dict[str, TteClockSim] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self.adjacency: dict[str, tuple[str, ...]] = {}
        self.vls: dict[str, VirtualLink] = {}
        self.vl_routes: dict[str, dict[str, tuple[str, ...]]] = {}
        self.vl_flow: dict[str, FlowRt] = {}
        self.be_next_hop: dict[tuple[str, str], str] = {}
        self.flows: dict[str, FlowRt] = {}
        self.buses: dict[str, BusRt] = {}
        self.can_nodes: dict[str, CanNodeRt] = {}
        self.can_flow_by_id: dict[tuple[str, int], CanFlowCfg] = {}
        self.gw_bus: dict[str, BusRt] = {}        # gateway name -> its bus
        self.gw_master: dict[str, MasterSyncState] = {}
        self.encap_vl_of: dict[tuple[str, str], str] = {}  # (gw, gw) -> vl id
        self.cluster_ps = 0
        self._cm: Optional[str] = None
        self._pcf_route_up: dict[str, dict[str, tuple[str, ...]]] = {}
        self._pcf_route_down: dict[str, tuple[str, ...]] = {}
        self._pcf_static_up: dict[str, int] = {}   # SM -> static latency to CM
        self._pcf_static_down: dict[str, int] = {}  # receiver -> from CM
        self._cm_arrivals: dict[int, list[int]] = {}
        self._build()

    # -- construction ----------------------------------------------------

    def _build(self):
        cfg = self.cfg
        P = cfg.sync.integration_period_ps
        for nc in cfg.nodes:
            self.nodes[nc.name] = TteNode(nc, nc.kind, nc.role)
            self.tte_clock[nc.name] = TteClockSim(nc.t_sys_ps, nc.drift_ppm, P)
            if nc.role is SyncRole.CM:
                if self._cm is not None:
                    raise TteConfigError("exactly one CM per domain")
                self._cm = nc.name
        if self._cm is None and cfg.nodes:
            raise TteConfigError("a CM node is required")

        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for lc in cfg.links:
            adj[lc.a].append(lc.b)
            adj[lc.b].append(lc.a)
            self.links[(lc.a, lc.b)] = Link(self, lc.a, lc.b, lc.rate_bps,
                                            lc.prop_ps)
            self.links[(lc.b, lc.a)] = Link(self, lc.b, lc.a, lc.rate_bps,
                                            lc.prop_ps)
        self.adjacency = {n: tuple(sorted(v)) for n, v in adj.items()}

        periods = [f.period_ps for f in cfg.tt_flows]
        self.cluster_ps = tte.cluster_cycle(periods, P)
        self.n_int_cycles = self.cluster_ps // P

        # traffic flows -> runtime state + virtual links
        for fc in cfg.tt_flows:
            vl = VirtualLink(f"vl:{fc.flow_id}", fc.sender, fc.receivers,
                             TrafficClass.TT, fc.payload_bytes, fc.period_ps,
                             expand_tt_schedule(fc.period_ps, fc.offsets_ps,
                                                P, self.cluster_ps))
            rt = FlowRt(fc, vl, "tt")
            self._register_vl(vl, rt)
            node = self.nodes[fc.sender]
            for cyc, off in vl.schedule:
                node.tt_entries.setdefault(cyc, []).append((off, rt))
        for fc in cfg.rc_flows:
            vl = VirtualLink(f"vl:{fc.flow_id}", fc.sender, fc.receivers,
                             TrafficClass.RC, fc.payload_bytes, bag_ps=fc.bag_ps)
            rt = FlowRt(fc, vl, "rc", shaper=RcShaper(fc.bag_ps))
            self._register_vl(vl, rt)
        for fc in cfg.be_flows:
            self.flows[fc.flow_id] = FlowRt(fc, None, "be")

        # BE next-hop tables (shortest path per destination)
        for dst in self.nodes:
            parent = {dst: dst}
            frontier = [dst]
            while frontier:
                nxt = []
                for x in frontier:
                    for nb in self.adjacency[x]:
                        if nb not in parent:
                            parent[nb] = x
                            nxt.append(nb)
                frontier = nxt
            for n, up in parent.items():
                if n != dst:
                    self.be_next_hop[(n, dst)] = up

        self._build_sync_paths()
        if self.nodes and self._collection_deadline() >= P:
            raise TteConfigError(
                "PCF collection must close within one integration period")
        self._build_guard_tables(P)
        self._build_can()

    def _register_vl(self, vl: VirtualLink, rt: FlowRt):
        if vl.vl_id in self.vls:
            raise TteConfigError(f"duplicate vl {vl.vl_id}")
        self.vls[vl.vl_id] = vl
        self.vl_routes[vl.vl_id] = build_route_tree(self.adjacency, vl.sender,
                                                    vl.receivers)
        self.vl_flow[vl.vl_id] = rt
        self.flows[rt.cfg.flow_id] = rt

    def _path_to(self, src: str, dst: str) -> list[str]:
        tree = build_route_tree(self.adjacency, src, (dst,))
        path, node = [src], src
        while node != dst:
            node = tree[node][0]
            path.append(node)
        return path

    def _build_sync_paths(self):
        """Static PCF routes and unloaded path latencies (wire + prop)."""
        cm = self._cm
        for name, node in self.nodes.items():
            if node.role is not SyncRole.SM:
                continue
            path = self._path_to(name, cm)
            self._pcf_route_up[name] = build_route_tree(self.adjacency, name,
                                                        (cm,))
            lat = 0
            for a, b in zip(path, path[1:]):
                link = self.links[(a, b)]
                lat += pcf_duration(link.rate_bps) + link.prop_ps
            self._pcf_static_up[name] = lat
        receivers = tuple(n for n, nd in self.nodes.items()
                          if n != cm and nd.role in (SyncRole.SM, SyncRole.SC))
        if receivers:
            self._pcf_route_down = build_route_tree(self.adjacency, cm,
                                                    receivers)
            for r in receivers:
                path = self._path_to(cm, r)
                lat = 0
                for a, b in zip(path, path[1:]):
                    link = self.links[(a, b)]
                    lat += pcf_duration(link.rate_bps) + link.prop_ps
                self._pcf_static_down[r] = lat

    def _build_guard_tables(self, P: int):
        """Protected TT instants per directed link, in the sending node's
        local time, with the accumulated upstream latency folded in."""
        table: dict[tuple[str, str], list[tuple[int, int]]] = {}
        for vl_id, vl in self.vls.items():
            if vl.traffic_class is not TrafficClass.TT:
                continue
            # distance (latency) of each tree node from the sender
            lat = {vl.sender: 0}
            order = [vl.sender]
            tree = self.vl_routes[vl_id]
            for node in order:
                for nxt in tree.get(node, ()):
                    link = self.links[(node, nxt)]
                    wire = eth_frame_duration(vl.payload_bytes, link.rate_bps)
                    lat[nxt] = lat[node] + wire + link.prop_ps
                    order.append(nxt)
            for cyc, off in vl.schedule:
                t0 = cyc * P + off
                for node in order:
                    for nxt in tree.get(node, ()):
                        link = self.links[(node, nxt)]
                        wire = eth_frame_duration(vl.payload_bytes,
                                                  link.rate_bps)
                        start = (t0 + lat[node]) % self.cluster_ps
                        table.setdefault((node, nxt), []).append((start, wire))
        for key, entries in table.items():
            self.links[key].set_guard_table(entries, self.cluster_ps)

    def _build_can(self):
        gw_names = []
        for bc in self.cfg.buses:
            rows = tuple(
                tuple(TimeWindow(w.kind, w.start_ntu, w.length_ntu, w.owner)
                      for w in row) for row in bc.rows)
            matrix = ttcan.build_system_matrix(bc.t_cycle_ntu,
                                               bc.ref_window_ntu, rows)
            bus = BusRt(bc, matrix)
            self.buses[bc.name] = bus
            for nc in bc.nodes:
                if nc.name in self.can_nodes:
                    raise CanConfigError(f"duplicate CAN node {nc.name}")
                if nc.mode == "gateway":
                    host = self.nodes.get(nc.name)
                    if host is None or host.kind != "gateway":
                        raise CanConfigError(
                            f"{nc.name} must be a backbone gateway node")
                    drift = host.cfg.drift_ppm  # one quartz per gateway
                else:
                    drift = nc.drift_ppm
                counter = NtuCounter(nc.t_sys_ps, drift, nc.tur)
                rt = CanNodeRt(nc, bus, counter)
                bus.nodes.append(rt)
                self.can_nodes[nc.name] = rt
                if nc.mode == "gateway":
                    self.gw_bus[nc.name] = bus
                    self.gw_master[nc.name] = MasterSyncState(
                        tur=nc.tur, smoothing=self.cfg.sync.smoothing,
                        ideal_prev=0)
                    gw_names.append(nc.name)
            for fc in bc.flows:
                self.can_flow_by_id[(bc.name, fc.can_id)] = fc
                src = self.can_nodes[fc.src]
                if src.bus is not bus:
                    raise CanConfigError(
                        f"flow {fc.flow_id} src {fc.src} not on bus {bc.name}")
        # ownership: a node may transmit a CAN id if it sources a flow with
        # it, or relays it as the bus gateway.  Runs after every bus is
        # registered so a relay into an earlier bus still sees the flow.
        for bc in self.cfg.buses:
            bus = self.buses[bc.name]
            owned = {w.owner for row in bus.matrix.rows for w in row
                     if w.kind is WindowKind.EXCLUSIVE and w.owner}
            for fc in bc.flows:
                src = self.can_nodes[fc.src]
                if fc.can_id in owned:
                    src.owned_ids.add(fc.can_id)
                else:
                    src.uses_arbitration = True
            gw = next((n for n in bus.nodes if n.cfg.mode == "gateway"), None)
            if gw is not None:
                for (bname, cid), fc in self.can_flow_by_id.items():
                    dest_rt = self.can_nodes.get(fc.dest)
                    if (bname != bc.name and dest_rt is not None
                            and dest_rt.bus is bus):
                        if cid in owned:
                            gw.owned_ids.add(cid)
                        else:
                            gw.uses_arbitration = True
        # encapsulation VLs: TT flows flagged encap between gateway pairs
        for fc in self.cfg.tt_flows:
            if fc.encap:
                if len(fc.receivers) != 1:
                    raise TteConfigError(
                        f"encap flow {fc.flow_id} must be unicast")
                self.encap_vl_of[(fc.sender, fc.receivers[0])] = \
                    f"vl:{fc.flow_id}"

    # -- simulation start ------------------------------------------------

    def start(self):
        """Schedule the initial event of every state machine."""
        for name in self.nodes:
            self.sim.schedule(0, EventKind.PCF_DISPATCH, name,
                              self._on_boundary, payload=(name, 0))
        for fr in self.flows.values():
            if fr.category == "rc":
                self._schedule_generator(fr, fr.cfg.sender, fr.cfg.offset_ps)
            elif fr.category == "be":
                self._schedule_generator(fr, fr.cfg.src, fr.cfg.offset_ps)
        for bus in self.buses.values():
            for rt in bus.nodes:
                if rt.cfg.mode == "standalone_master":
                    self.sim.schedule(0, EventKind.CYCLE_END, rt.cfg.name,
                                      self._on_standalone_cycle, payload=rt)
                elif rt.cfg.mode == "gateway":
                    period = self.cfg.sync.resync_period_ps or \
                        bus.cfg.t_cycle_ntu * bus.cfg.ntu_ps
                    self.sim.schedule(0, EventKind.CYCLE_END, rt.cfg.name,
                                      self._on_gateway_cycle,
                                      payload=(rt, period, 0))
            for fc in bus.cfg.flows:
                rt = self.can_nodes[fc.src]
                self._schedule_can_generator(rt, fc, fc.offset_ps)

    def run(self, t_end: SimTime):
        self.start()
        self.sim.run_until(t_end)
        return self.metrics

    # -- TT-E sync service -------------------------------------------------

    def _on_boundary(self, sim, ev):
        name, k = ev.payload
        node = self.nodes[name]
        clk = self.tte_clock[name]
        P = self.cfg.sync.integration_period_ps
        ic = k % self.n_int_cycles
        # TT dispatches for this integration cycle, placed with the offset
        # state as of now; later corrections intentionally leave them put.
        for off, fr in node.tt_entries.get(ic, ()):
            t = max(sim.now, clk.true_when_local_ps(k * P + off))
            sim.schedule(t, EventKind.GENERATOR_FIRE, name,
                         self._on_tt_dispatch, payload=(fr, name))
        if node.role is SyncRole.SM:
            pcf = PcfFrame(sender=name, ic_index=ic, step=1,
                           sent_local_ps=clk.local_ps(sim.now))
            self._emit_pcf(name, pcf, self._pcf_route_up[name])
        if node.role is SyncRole.CM:
            t = max(sim.now, clk.true_when_local_ps(
                k * P + self._collection_deadline()))
            sim.schedule(t, EventKind.PCF_DISPATCH, name,
                         self._on_cm_compress, payload=k)
        nxt = max(sim.now + 1, clk.true_when_local_ps((k + 1) * P))
        sim.schedule(nxt, EventKind.PCF_DISPATCH, name, self._on_boundary,
                     payload=(name, k + 1))

    def _collection_deadline(self) -> int:
        worst = max(self._pcf_static_up.values(), default=0)
        return worst + self.cfg.sync.collection_margin_ps

    def _emit_pcf(self, origin: str, pcf: PcfFrame, tree):
        frame = EthFrame(vl_id=f"pcf:{origin}", traffic_class=TrafficClass.TT,
                         payload_bytes=tte.PCF_PAYLOAD_BYTES, src=origin,
                         born=self.sim.now, pcf=pcf)
        for nxt in tree.get(origin, ()):
            self.links[(origin, nxt)].enqueue(replace(
                frame, pcf=replace(pcf)), "pcf")

    def _on_cm_compress(self, sim, ev):
        k = ev.payload
        cm = self._cm
        clk = self.tte_clock[cm]
        arrivals = self._cm_arrivals.pop(k % self.n_int_cycles, [])
        if arrivals:
            corr = cm_compress(arrivals)
            clk.apply_correction(-corr)
            self.metrics.sync_sample(sim.now, cm, "cm_mean_ticks", corr)
        else:
            self.metrics.bump("sync_miss")
            self.metrics.sync_sample(sim.now, cm, "cm_empty", 0)
        pcf = PcfFrame(sender=cm, ic_index=k % self.n_int_cycles, step=2,
                       sent_local_ps=clk.local_ps(sim.now))
        self._emit_pcf(cm, pcf, self._pcf_route_down)

    def _on_pcf_at(self, name: str, frame: EthFrame, now: SimTime):
        node = self.nodes[name]
        clk = self.tte_clock[name]
        pcf = frame.pcf
        if pcf.step == 1:
            if name == self._cm:
                lat = self._pcf_static_up[pcf.sender]
                seen = clk.local_ps_fine(now) - pcf.transparent_delay_ps
                off_ps = seen - (pcf.sent_local_ps + lat)
                ticks = _div_round(off_ps, clk.t_sys_ps)
                self._cm_arrivals.setdefault(pcf.ic_index, []).append(ticks)
            else:
                self._forward_pcf(name, frame)
            return
        # step 2: correct, and forward when this node fans it out
        if name != self._cm:
            lat = self._pcf_static_down[name]
            seen = clk.local_ps_fine(now) - pcf.transparent_delay_ps
            corr_ps = (pcf.sent_local_ps + lat) - seen
            ticks = _div_round(corr_ps, clk.t_sys_ps)
            clk.apply_correction(ticks)
            self.metrics.sync_sample(now, name, "tte_corr_ticks", ticks)
            self._forward_pcf(name, frame)

    def _forward_pcf(self, name: str, frame: EthFrame):
        tree = (self._pcf_route_down if frame.pcf.step == 2
                else self._pcf_route_up.get(frame.pcf.sender, {}))
        for nxt in tree.get(name, ()):
            self.links[(name, nxt)].enqueue(
                replace(frame, pcf=replace(frame.pcf)), "pcf")

    # -- traffic ----------------------------------------------------------

    def _on_tt_dispatch(self, sim, ev):
        fr, name = ev.payload
        vl = fr.vl
        if fr.cfg.encap:
            frame = self._build_encap_frame(fr, name, sim.now)
            if frame is None:
                self.metrics.bump(f"slot_skipped:{fr.cfg.flow_id}")
                for nxt in self.vl_routes[vl.vl_id].get(name, ()):
                    self.links[(name, nxt)].kick(sim.now)
                return
        else:
            frame = EthFrame(vl_id=vl.vl_id, traffic_class=TrafficClass.TT,
                             payload_bytes=vl.payload_bytes, src=name,
                             flow_id=fr.cfg.flow_id, seq=fr.seq, born=sim.now)
            fr.seq += 1
        for nxt in self.vl_routes[vl.vl_id].get(name, ()):
            self.links[(name, nxt)].enqueue(replace(frame), "tt")

    def _build_encap_frame(self, fr: FlowRt, name: str, now: SimTime):
        node = self.nodes[name]
        if not node.pending_encap:
            return None
        taken, rest = select_for_encap(list(node.pending_encap),
                                       fr.vl.payload_bytes)
        node.pending_encap = deque(rest)
        frame = EthFrame(vl_id=fr.vl.vl_id, traffic_class=TrafficClass.TT,
                         payload_bytes=fr.vl.payload_bytes, src=name,
                         flow_id=fr.cfg.flow_id, seq=fr.seq, born=now,
                         tuples=tuple(taken))
        fr.seq += 1
        return frame

    def _schedule_generator(self, fr: FlowRt, src: str, offset_ps: int):
        clk = self.tte_clock[src]
        t = max(self.sim.now, clk.true_when_local_ps(offset_ps))
        self.sim.schedule(t, EventKind.GENERATOR_FIRE, src,
                          self._on_generator, payload=(fr, src, offset_ps))

    def _on_generator(self, sim, ev):
        fr, src, local_due = ev.payload
        if fr.category == "rc":
            frame = EthFrame(vl_id=fr.vl.vl_id, traffic_class=TrafficClass.RC,
                             payload_bytes=fr.vl.payload_bytes, src=src,
                             flow_id=fr.cfg.flow_id, seq=fr.seq, born=sim.now)
            fr.seq += 1
            # the gap is policed on the sender's clock, like every other
            # timing decision a node makes
            clk = self.tte_clock[src]
            local_now = clk.local_ps(sim.now)
            at_local = fr.shaper.admit(local_now)
            if at_local > local_now:
                t = max(sim.now + 1, clk.true_when_local_ps(at_local))
                sim.schedule(t, EventKind.GENERATOR_FIRE, src,
                             self._on_rc_admit, payload=(fr, src, frame))
            else:
                self._fan_out(src, fr, frame, "rc")
        else:  # be
            frame = EthFrame(vl_id="", traffic_class=TrafficClass.BE,
                             payload_bytes=fr.cfg.payload_bytes, src=src,
                             dst=fr.cfg.dst, flow_id=fr.cfg.flow_id,
                             seq=fr.seq, born=sim.now)
            fr.seq += 1
            hop = self.be_next_hop.get((src, fr.cfg.dst))
            if hop is None:
                self.metrics.bump("unroutable")
            else:
                self.links[(src, hop)].enqueue(frame, "be")
        clk = self.tte_clock[src]
        nxt_due = local_due + fr.cfg.period_ps
        t = max(sim.now + 1, clk.true_when_local_ps(nxt_due))
        sim.schedule(t, EventKind.GENERATOR_FIRE, src, self._on_generator,
                     payload=(fr, src, nxt_due))

    def _on_rc_admit(self, sim, ev):
        fr, src, frame = ev.payload
        self._fan_out(src, fr, frame, "rc")

    def _fan_out(self, at: str, fr: FlowRt, frame: EthFrame, cls: str):
        for nxt in self.vl_routes[fr.vl.vl_id].get(at, ()):
            self.links[(at, nxt)].enqueue(replace(frame), cls)

    def _on_eth_arrival(self, sim, ev):
        frame, link = ev.payload
        name = ev.node
        node = self.nodes[name]
        if frame.pcf is not None:
            self._on_pcf_at(name, frame, sim.now)
            return
        if frame.traffic_class is TrafficClass.BE:
            if name == frame.dst:
                self.metrics.delivered(frame.flow_id, "be", frame.seq,
                                       frame.born, sim.now, name)
            else:
                hop = self.be_next_hop.get((name, frame.dst))
                if hop is None:
                    self.metrics.bump("unroutable")
                else:
                    self.links[(name, hop)].enqueue(frame, "be")
            return
        vl = self.vls.get(frame.vl_id)
        if vl is None:
            self.metrics.bump("unroutable")
            return
        cls = "tt" if frame.traffic_class is TrafficClass.TT else "rc"
        for nxt in self.vl_routes[frame.vl_id].get(name, ()):
            self.links[(name, nxt)].enqueue(
                replace(frame), cls)
        if name in vl.receivers:
            if frame.tuples:
                self._decap(name, frame, sim.now)
            else:
                self.metrics.delivered(frame.flow_id, cls, frame.seq,
                                       frame.born, sim.now, name)

    # -- CAN side -----------------------------------------------------------

    def _decap(self, gw_name: str, frame: EthFrame, now: SimTime):
        rt = self.can_nodes[gw_name]
        for t in frame.tuples:
            rt.pending.append(t.frame)
        self.metrics.bump(f"decap:{gw_name}", len(frame.tuples))

    def _schedule_can_generator(self, rt: CanNodeRt, fc: CanFlowCfg,
                                due_local_ps: int):
        # CAN application clocks tick on the node's NTU counter.
        target = counts_of_ps_nominal(due_local_ps, rt.bus.cfg.ntu_ps)
        t = max(self.sim.now, rt.counter.true_of_count(target))
        self.sim.schedule(t, EventKind.GENERATOR_FIRE, fc.src,
                          self._on_can_generator, payload=(rt, fc, due_local_ps))

    def _on_can_generator(self, sim, ev):
        rt, fc, due = ev.payload
        fr = self.flows.setdefault(
            fc.flow_id, FlowRt(fc, None, "ttcan"))
        frame = CanFrame(fc.can_id, fc.dlc, bytes(fc.dlc), src=fc.src,
                         flow_id=fc.flow_id, seq=fr.seq, born=sim.now)
        fr.seq += 1
        rt.pending.append(frame)
        self._schedule_can_generator(rt, fc, due + fc.period_ps)

    def _on_standalone_cycle(self, sim, ev):
        """Free-running TT-CAN time master: emit the reference, schedule the
        next cycle on its own counter."""
        rt: CanNodeRt = ev.payload
        bus = rt.bus
        if rt.state.refs_seen:
            rt.cycle_index = (rt.cycle_index + 1) % bus.matrix.n_rows
        sof_mark = rt.counter.local_time(sim.now + bus.bit_ps + bus.cfg.prop_ps)
        rt.state.ref_mark_prev = rt.state.ref_mark
        rt.state.ref_mark = sof_mark
        msg = ReferenceMessage(sof_mark, 0, rt.cycle_index)
        self._bus_start_tx(bus, rt, msg.to_frame(rt.cfg.name), sim.now)
        cycle_counts = bus.cfg.t_cycle_ntu * COUNTS_PER_NTU
        target = rt.counter.count_at(sim.now) + cycle_counts
        t = max(sim.now + 1, rt.counter.true_of_count(target))
        sim.schedule(t, EventKind.CYCLE_END, rt.cfg.name,
                     self._on_standalone_cycle, payload=rt)

    def _on_gateway_cycle(self, sim, ev):
        """Backbone-gridded resync: realign the bus counter, broadcast the
        reference, rearm on the corrected backbone clock."""
        rt, period, k = ev.payload
        bus = rt.bus
        clk = self.tte_clock[rt.cfg.name]
        if rt.state.refs_seen:
            rt.cycle_index = (rt.cycle_index + 1) % bus.matrix.n_rows
        if k == 0:
            # Counter starts epoch-aligned; the first correction happens at
            # the end of the first cycle, once there is drift to measure.
            mrm, gap = rt.counter.local_time(sim.now), 0
        else:
            state = self.gw_master[rt.cfg.name]
            ideal = counts_of_ps_nominal(clk.local_ps(sim.now),
                                         bus.cfg.ntu_ps)
            res = master_cycle_resync(state, rt.counter.local_time(sim.now),
                                      wrap(ideal))
            rt.counter.adjust_counts(sim.now, res.t_gap)
            if res.new_tur != rt.counter.tur:
                rt.counter.set_tur(sim.now, res.new_tur)
            self.metrics.sync_sample(sim.now, rt.cfg.name, "t_gap_counts",
                                     res.t_gap)
            mrm, gap = res.mrm, res.t_gap
        rt.state.master_ref_mark_prev = rt.state.master_ref_mark
        rt.state.master_ref_mark = mrm
        rt.state.ref_mark_prev = rt.state.ref_mark
        rt.state.ref_mark = mrm
        msg = ReferenceMessage(mrm, gap, rt.cycle_index)
        self._bus_start_tx(bus, rt, msg.to_frame(rt.cfg.name), sim.now)
        t = max(sim.now + 1, clk.true_when_local_ps((k + 1) * period))
        sim.schedule(t, EventKind.CYCLE_END, rt.cfg.name,
                     self._on_gateway_cycle, payload=(rt, period, k + 1))

    def _bus_start_tx(self, bus: BusRt, rt: CanNodeRt, frame: CanFrame,
                      now: SimTime):
        if now < bus.busy_until:
            self.metrics.bump(f"bus_busy_skip:{bus.cfg.name}")
            return False
        dur = bus.frame_duration(frame.dlc)
        end = now + dur + bus.cfg.prop_ps
        bus.busy_until = now + dur
        bus.current = (frame, now, end)
        self.sim.schedule(now + bus.bit_ps + bus.cfg.prop_ps,
                          EventKind.FRAME_ARRIVAL, bus.cfg.name,
                          self._on_can_sof, payload=(bus, frame))
        self.sim.schedule(end, EventKind.FRAME_ARRIVAL, bus.cfg.name,
                          self._on_can_end, payload=(bus, frame))
        return True

    def _on_can_sof(self, sim, ev):
        bus, frame = ev.payload
        is_ref = frame.can_id == ttcan.REFERENCE_CAN_ID
        for rt in bus.nodes:
            # The emitter's marks are set at emission, not at its own SOF.
            capture_sync_mark(rt.state, rt.counter.local_time(sim.now),
                              is_ref and frame.src != rt.cfg.name)

    def _on_can_end(self, sim, ev):
        bus, frame = ev.payload
        bus.current = None
        if frame.can_id == ttcan.REFERENCE_CAN_ID:
            self._on_reference_end(bus, frame, sim.now)
            return
        fc = self.can_flow_by_id.get((bus.cfg.name, frame.can_id))
        if fc is None:
            # relayed onto this bus: original flow lives on another bus
            fc = next((f for (b, cid), f in self.can_flow_by_id.items()
                       if cid == frame.can_id and b != bus.cfg.name), None)
        if fc is not None:
            dest_rt = self.can_nodes.get(fc.dest)
            if dest_rt is not None and dest_rt.bus is bus:
                self.metrics.delivered(frame.flow_id or fc.flow_id,
                                       "ttcan", frame.seq, frame.born,
                                       sim.now, fc.dest)
            elif dest_rt is not None:
                gw = next((n for n in bus.nodes
                           if n.cfg.mode == "gateway"), None)
                if gw is not None:
                    self._enqueue_encap(gw, dest_rt, frame)

    def _enqueue_encap(self, gw: CanNodeRt, dest_rt: CanNodeRt,
                       frame: CanFrame):
        dest_gw = next(n.cfg.name for n in dest_rt.bus.nodes
                       if n.cfg.mode == "gateway")
        vl_id = self.encap_vl_of.get((gw.cfg.name, dest_gw))
        if vl_id is None:
            self.metrics.bump("unroutable")
            return
        bus_index = list(self.buses).index(gw.bus.cfg.name)
        self.nodes[gw.cfg.name].pending_encap.append(
            EncapTuple(bus_index, frame))

    def _on_reference_end(self, bus: BusRt, frame: CanFrame, now: SimTime):
        msg = ReferenceMessage.from_frame(frame)
        master_mode = self._bus_master_mode(bus)
        for rt in bus.nodes:
            if rt.cfg.name != frame.src:
                if rt.cfg.mode == "slave" and master_mode == "gateway":
                    tau = counts_of_ps_nominal(
                        bus.frame_duration(8) + bus.cfg.prop_ps,
                        bus.cfg.ntu_ps)
                    res = slave_on_reference(rt.slave_sync,
                                             rt.counter.local_time(now),
                                             msg.master_ref_mark, msg.t_gap,
                                             tau)
                    rt.counter.set_local_time(now, res.adopted_lt)
                    if res.new_tur != rt.counter.tur:
                        rt.counter.set_tur(now, res.new_tur)
                    rt.state.ref_mark_prev = rt.state.ref_mark
                    rt.state.ref_mark = msg.master_ref_mark
                    rt.state.local_offset = 0
                    self.metrics.sync_sample(
                        now, rt.cfg.name, "can_df_ppb",
                        int((res.df - 1) * 10**9))
                else:
                    # free-running slave: rate correction from SOF marks
                    st = rt.state
                    st.master_ref_mark_prev = st.master_ref_mark
                    st.master_ref_mark = msg.master_ref_mark
                    if st.refs_seen:
                        df = drift_factor(st.ref_mark, st.ref_mark_prev,
                                          st.master_ref_mark,
                                          st.master_ref_mark_prev)
                        new_tur = ttcan.apply_drift_correction(
                            rt.counter.tur, df, self.cfg.sync.smoothing)
                        if new_tur != rt.counter.tur:
                            rt.counter.set_tur(now, new_tur)
                        self.metrics.sync_sample(
                            now, rt.cfg.name, "can_df_ppb",
                            int((df - 1) * 10**9))
                    st.local_offset = ttcan.local_offset(
                        st.ref_mark, msg.master_ref_mark)
                rt.cycle_index = msg.cycle_index % bus.matrix.n_rows
            rt.state.refs_seen += 1
            self._schedule_node_windows(rt, now)

    def _bus_master_mode(self, bus: BusRt) -> str:
        for rt in bus.nodes:
            if rt.cfg.mode in ("gateway", "standalone_master"):
                return rt.cfg.mode
        raise CanConfigError(f"bus {bus.cfg.name} has no time master")

    def _schedule_node_windows(self, rt: CanNodeRt, now: SimTime):
        """Arm this node's upcoming windows for the current basic cycle."""
        if not rt.state.refs_seen:
            return
        if not (rt.owned_ids or rt.uses_arbitration):
            return
        bus = rt.bus
        row = bus.matrix.rows[rt.cycle_index % bus.matrix.n_rows]
        lt = rt.counter.local_time(now)
        ct = wrap_forward(lt, rt.state.ref_mark)
        cycle_counts = bus.matrix.t_cycle_ntu * COUNTS_PER_NTU
        if ct >= cycle_counts:
            return
        cur = rt.counter.count_at(now)
        for w in row:
            if w.kind is WindowKind.FREE:
                continue
            if w.kind is WindowKind.EXCLUSIVE and w.owner not in rt.owned_ids:
                continue
            if w.kind is WindowKind.ARBITRATION and not rt.uses_arbitration:
                continue
            start = w.start_ntu * COUNTS_PER_NTU
            if start <= ct:
                continue
            t = max(now + 1, rt.counter.true_of_count(cur + (start - ct)))
            self.sim.schedule(t, EventKind.WINDOW_OPEN, rt.cfg.name,
                              self._on_can_window, payload=(rt, w))

    def _on_can_window(self, sim, ev):
        rt, w = ev.payload
        bus = rt.bus
        if w.kind is WindowKind.EXCLUSIVE:
            for i, frame in enumerate(rt.pending):
                if frame.can_id == w.owner:
                    if self._bus_start_tx(bus, rt, frame, sim.now):
                        del rt.pending[i]
                    return
            self.metrics.bump(f"slot_empty:{bus.cfg.name}")
        else:
            if not rt.pending:
                return
            frame = min(rt.pending, key=lambda f: f.can_id)
            self._join_arbitration(bus, rt, frame, sim.now)

    def _join_arbitration(self, bus: BusRt, rt: CanNodeRt, frame: CanFrame,
                          now: SimTime):
        if bus.arb_resolve_at is not None and now <= bus.arb_resolve_at:
            bus.arb_contenders.append((frame, rt))
            return
        if now < bus.busy_until:
            self.metrics.bump(f"bus_busy_skip:{bus.cfg.name}")
            return
        bus.arb_contenders = [(frame, rt)]
        bus.arb_resolve_at = now + bus.bit_ps
        bus.busy_until = bus.arb_resolve_at  # claimed at the first edge
        self.sim.schedule(bus.arb_resolve_at, EventKind.WINDOW_OPEN,
                          bus.cfg.name, self._on_arb_resolve,
                          payload=(bus, now))

    def _on_arb_resolve(self, sim, ev):
        bus, start = ev.payload
        contenders = bus.arb_contenders
        bus.arb_contenders = []
        bus.arb_resolve_at = None
        winner = ttcan.arbitrate([f for f, _ in contenders])
        owner = next(rt for f, rt in contenders if f is winner)
        owner.pending.remove(winner)
        # The bus was seized at the first edge; account the elapsed bit.
        dur = bus.frame_duration(winner.dlc)
        end = start + dur + bus.cfg.prop_ps
        bus.busy_until = start + dur
        bus.current = (winner, start, end)
        sim.schedule(max(sim.now, start + bus.bit_ps + bus.cfg.prop_ps),
                     EventKind.FRAME_ARRIVAL, bus.cfg.name,
                     self._on_can_sof, payload=(bus, winner))
        sim.schedule(end, EventKind.FRAME_ARRIVAL, bus.cfg.name,
                     self._on_can_end, payload=(bus, winner))


def _div_round(num: int, den: int) -> int:
    """Round half up, sign-symmetric via floor((2n+d)/2d)."""
    return (2 * num + den) // (2 * den)
