"""Scenario files: a line-oriented key/value format describing one network.

Grammar (one directive per line, `#` comments, blank lines ignored):

    schema_version 1
    seed 7
    duration 500ms
    integration_period 3ms          # TT-E resynchronization period
    collection_margin 300us         # PCF collection wait past the worst path
    guard_margin 2us                # lower-class fit margin before TT slots
    be_queue_cap 64
    resync_period 24.576ms          # gateway bus-counter realignment period
    warmup 100ms                    # stats window start (default: derived)
    drain 60ms                      # tail excluded from the stats window
    bottleneck sw1 sw2              # utilization reference link (fig6 sweep)
    sync_sample 1ms                 # clock-error sampling period

    node <name> <es|switch|gateway> <cm|sm|sc> tick=250ns [drift=200ppm]
    link <a> <b> [rate=100M] [prop=100ns]
    ttflow <id> sender=<n> receivers=<n,n> payload=50 period=3ms \
        offsets=500us,1.5ms [encap]
    rcflow <id> sender=<n> receivers=<n> payload=100 period=1ms bag=1ms \
        [offset=0]
    beflow <id> src=<n> dst=<n> payload=500 period=200us [offset=0]
    bus <name> bitrate=1M ntu=800ns t_cycle=30720 ref_window=200 \
        [prop=100ns] [stuffing=nominal]
    cannode <bus> <name> <gateway|slave|standalone_master> tick=62.5ns \
        tur=64/5 [drift=-200ppm]
    window <bus> row=0 kind=exclusive start=300 len=200 [owner=32]
    canflow <bus> <id> id=32 src=<n> dest=<n> dlc=8 period=12.288ms \
        [offset=1ms]
    sweep <param> v1,v2,...

`t_cycle`, `ref_window`, `start`, `len` are NTU counts.  Durations accept
ps/ns/us/ms/s suffixes; rates accept k/M/G.  Validation reports every
problem with its line number instead of stopping at the first.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .kernel import SimTime
from .netsim import (
    BeFlowCfg, BusCfg, CanFlowCfg, CanNodeCfg, CanWindowCfg, LinkCfg,
    Network, NodeCfg, RcFlowCfg, SimConfig, SyncCfg, TtFlowCfg,
)
from .tte import ETH_MAX_PAYLOAD_BYTES, SyncRole
from .ttcan import CAN_MAX_ID, WindowKind

SCHEMA_VERSION = 1

_SUFFIX_PS = {"ps": 1, "ns": 10**3, "us": 10**6, "ms": 10**9, "s": 10**12}
_RATE_MULT = {"": 1, "k": 10**3, "M": 10**6, "G": 10**9}


class ScenarioError(ValueError):
    """Parse or validation failure; message carries line numbers."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def parse_duration_ps(text: str) -> SimTime:
    for suf in ("ps", "ns", "us", "ms", "s"):
        if text.endswith(suf):
            num = text[: -len(suf)]
            ps = Fraction(num) * _SUFFIX_PS[suf]
            if ps.denominator != 1 or ps < 0:
                raise ValueError(f"{text!r} is not a whole picosecond count")
            return int(ps)
    raise ValueError(f"duration {text!r} needs a ps/ns/us/ms/s suffix")


def parse_rate_bps(text: str) -> int:
    t = text[:-3] if text.endswith("bps") else text
    mult = 1
    if t and t[-1] in _RATE_MULT:
        mult = _RATE_MULT[t[-1]]
        t = t[:-1]
    val = Fraction(t) * mult
    if val.denominator != 1 or val <= 0:
        raise ValueError(f"rate {text!r} is not a positive bit count")
    return int(val)


def parse_ppm(text: str) -> Fraction:
    if not text.endswith("ppm"):
        raise ValueError(f"drift {text!r} needs a ppm suffix")
    return Fraction(text[:-3])


def parse_fraction(text: str) -> Fraction:
    if "/" in text:
        num, den = text.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(text)


def parse_int(text: str) -> int:
    return int(text, 0)  # accepts 0x.. ids


@dataclass
class Scenario:
    name: str
    config: SimConfig
    seed: int = 0
    duration_ps: SimTime = 0
    warmup_ps: Optional[SimTime] = None
    drain_ps: Optional[SimTime] = None
    bottleneck: Optional[tuple[str, str]] = None
    sync_sample_ps: SimTime = 1_000_000_000
    sweep: dict[str, list[str]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_kv(tokens, lineno, errors, flags=()):
    kv, pos = {}, []
    for tok in tokens:
        if tok in flags:
            kv[tok] = "yes"
        elif "=" in tok:
            k, v = tok.split("=", 1)
            kv[k] = v
        else:
            pos.append(tok)
    return pos, kv


def _need(kv, keys, lineno, what, errors):
    missing = [k for k in keys if k not in kv]
    if missing:
        errors.append(f"line {lineno}: {what} missing {', '.join(missing)}")
        return False
    return True


class _Parser:
    """One pass: collect raw sections, then assemble + validate."""

    def __init__(self, name: str):
        self.name = name
        self.errors: list[str] = []
        self.top: dict[str, str] = {}
        self.nodes: list[NodeCfg] = []
        self.links: list[LinkCfg] = []
        self.tt: list[TtFlowCfg] = []
        self.rc: list[RcFlowCfg] = []
        self.be: list[BeFlowCfg] = []
        self.buses: dict[str, dict] = {}
        self.sweep: dict[str, list[str]] = {}
        self.lines_of: dict[str, int] = {}

    def err(self, lineno, msg):
        self.errors.append(f"line {lineno}: {msg}")

    def feed(self, lineno: int, line: str):
        tokens = line.split()
        head, rest = tokens[0], tokens[1:]
        try:
            getattr(self, f"_d_{head}", self._d_unknown)(lineno, head, rest)
        except (ValueError, ZeroDivisionError) as e:
            self.err(lineno, str(e))

    def _d_unknown(self, lineno, head, rest):
        self.err(lineno, f"unknown directive {head!r}")

    def _d_schema_version(self, lineno, head, rest):
        self.top["schema_version"] = rest[0] if rest else ""
        if not rest or rest[0] != str(SCHEMA_VERSION):
            self.err(lineno, f"unsupported schema_version "
                             f"{rest[0] if rest else '(none)'}")

    def _simple(self, key, lineno, rest, parser):
        if not rest:
            self.err(lineno, f"{key} needs a value")
            return
        self.top[key] = parser(rest[0])

    def _d_seed(self, lineno, head, rest):
        self._simple("seed", lineno, rest, parse_int)

    def _d_duration(self, lineno, head, rest):
        self._simple("duration", lineno, rest, parse_duration_ps)

    def _d_integration_period(self, lineno, head, rest):
        self._simple("integration_period", lineno, rest, parse_duration_ps)

    def _d_collection_margin(self, lineno, head, rest):
        self._simple("collection_margin", lineno, rest, parse_duration_ps)

    def _d_guard_margin(self, lineno, head, rest):
        self._simple("guard_margin", lineno, rest, parse_duration_ps)

    def _d_be_queue_cap(self, lineno, head, rest):
        self._simple("be_queue_cap", lineno, rest, parse_int)

    def _d_resync_period(self, lineno, head, rest):
        self._simple("resync_period", lineno, rest, parse_duration_ps)

    def _d_warmup(self, lineno, head, rest):
        self._simple("warmup", lineno, rest, parse_duration_ps)

    def _d_drain(self, lineno, head, rest):
        self._simple("drain", lineno, rest, parse_duration_ps)

    def _d_sync_sample(self, lineno, head, rest):
        self._simple("sync_sample", lineno, rest, parse_duration_ps)

    def _d_bottleneck(self, lineno, head, rest):
        if len(rest) != 2:
            self.err(lineno, "bottleneck needs two node names")
            return
        self.top["bottleneck"] = (rest[0], rest[1])

    def _d_node(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        if len(pos) != 3:
            self.err(lineno, "node needs <name> <kind> <role>")
            return
        name, kind, role = pos
        if kind not in ("es", "switch", "gateway"):
            self.err(lineno, f"node kind {kind!r} not es/switch/gateway")
            return
        try:
            sync_role = SyncRole[role.upper()]
        except KeyError:
            self.err(lineno, f"sync role {role!r} not cm/sm/sc")
            return
        if not _need(kv, ("tick",), lineno, f"node {name}", self.errors):
            return
        self.lines_of[f"node:{name}"] = lineno
        self.nodes.append(NodeCfg(
            name, kind, sync_role, parse_duration_ps(kv["tick"]),
            parse_ppm(kv.get("drift", "0ppm"))))

    def _d_link(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        if len(pos) != 2:
            self.err(lineno, "link needs <a> <b>")
            return
        self.lines_of[f"link:{pos[0]}:{pos[1]}"] = lineno
        self.links.append(LinkCfg(
            pos[0], pos[1], parse_rate_bps(kv.get("rate", "100M")),
            parse_duration_ps(kv.get("prop", "0ps"))))

    def _d_ttflow(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors, flags=("encap",))
        if len(pos) != 1:
            self.err(lineno, "ttflow needs a flow id")
            return
        if not _need(kv, ("sender", "receivers", "payload", "period",
                          "offsets"), lineno, f"ttflow {pos[0]}", self.errors):
            return
        self.lines_of[f"flow:{pos[0]}"] = lineno
        self.tt.append(TtFlowCfg(
            pos[0], kv["sender"], tuple(kv["receivers"].split(",")),
            parse_int(kv["payload"]), parse_duration_ps(kv["period"]),
            tuple(parse_duration_ps(o) for o in kv["offsets"].split(",")),
            encap=kv.get("encap") == "yes"))

    def _d_rcflow(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        if len(pos) != 1:
            self.err(lineno, "rcflow needs a flow id")
            return
        if not _need(kv, ("sender", "receivers", "payload", "period", "bag"),
                     lineno, f"rcflow {pos[0]}", self.errors):
            return
        self.lines_of[f"flow:{pos[0]}"] = lineno
        self.rc.append(RcFlowCfg(
            pos[0], kv["sender"], tuple(kv["receivers"].split(",")),
            parse_int(kv["payload"]), parse_duration_ps(kv["period"]),
            parse_duration_ps(kv["bag"]),
            parse_duration_ps(kv.get("offset", "0ps"))))

    def _d_beflow(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        if len(pos) != 1:
            self.err(lineno, "beflow needs a flow id")
            return
        if not _need(kv, ("src", "dst", "payload", "period"), lineno,
                     f"beflow {pos[0]}", self.errors):
            return
        self.lines_of[f"flow:{pos[0]}"] = lineno
        self.be.append(BeFlowCfg(
            pos[0], kv["src"], kv["dst"], parse_int(kv["payload"]),
            parse_duration_ps(kv["period"]),
            parse_duration_ps(kv.get("offset", "0ps"))))

    def _d_bus(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        if len(pos) != 1:
            self.err(lineno, "bus needs a name")
            return
        if not _need(kv, ("bitrate", "ntu", "t_cycle", "ref_window"), lineno,
                     f"bus {pos[0]}", self.errors):
            return
        if pos[0] in self.buses:
            self.err(lineno, f"duplicate bus {pos[0]}")
            return
        self.lines_of[f"bus:{pos[0]}"] = lineno
        self.buses[pos[0]] = {
            "lineno": lineno,
            "bitrate": parse_rate_bps(kv["bitrate"]),
            "ntu": parse_duration_ps(kv["ntu"]),
            "t_cycle": parse_int(kv["t_cycle"]),
            "ref_window": parse_int(kv["ref_window"]),
            "prop": parse_duration_ps(kv.get("prop", "0ps")),
            "stuffing": kv.get("stuffing", "nominal"),
            "nodes": [], "windows": [], "flows": [],
        }

    def _bus_of(self, lineno, pos):
        if not pos or pos[0] not in self.buses:
            self.err(lineno, f"unknown bus {pos[0] if pos else '(none)'!r}")
            return None
        return self.buses[pos[0]]

    def _d_cannode(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        bus = self._bus_of(lineno, pos)
        if bus is None or len(pos) != 3:
            if bus is not None:
                self.err(lineno, "cannode needs <bus> <name> <mode>")
            return
        _, name, mode = pos
        if mode not in ("gateway", "slave", "standalone_master"):
            self.err(lineno, f"cannode mode {mode!r} invalid")
            return
        if not _need(kv, ("tick", "tur"), lineno, f"cannode {name}",
                     self.errors):
            return
        self.lines_of[f"cannode:{name}"] = lineno
        bus["nodes"].append(CanNodeCfg(
            name, parse_duration_ps(kv["tick"]),
            parse_ppm(kv.get("drift", "0ppm")),
            parse_fraction(kv["tur"]), mode))

    def _d_window(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        bus = self._bus_of(lineno, pos)
        if bus is None:
            return
        if not _need(kv, ("row", "kind", "start", "len"), lineno, "window",
                     self.errors):
            return
        try:
            kind = WindowKind(kv["kind"])
        except ValueError:
            self.err(lineno, f"window kind {kv['kind']!r} invalid")
            return
        owner = parse_int(kv["owner"]) if "owner" in kv else None
        bus["windows"].append((parse_int(kv["row"]), CanWindowCfg(
            kind, parse_int(kv["start"]), parse_int(kv["len"]), owner)))

    def _d_canflow(self, lineno, head, rest):
        pos, kv = _split_kv(rest, lineno, self.errors)
        bus = self._bus_of(lineno, pos)
        if bus is None or len(pos) != 2:
            if bus is not None:
                self.err(lineno, "canflow needs <bus> <flow id>")
            return
        if not _need(kv, ("id", "src", "dest", "dlc", "period"), lineno,
                     f"canflow {pos[1]}", self.errors):
            return
        self.lines_of[f"flow:{pos[1]}"] = lineno
        bus["flows"].append(CanFlowCfg(
            pos[1], parse_int(kv["id"]), kv["src"], kv["dest"],
            parse_int(kv["dlc"]), parse_duration_ps(kv["period"]),
            parse_duration_ps(kv.get("offset", "0ps"))))

    def _d_sweep(self, lineno, head, rest):
        if len(rest) != 2:
            self.err(lineno, "sweep needs <param> <v1,v2,...>")
            return
        self.sweep[rest[0]] = rest[1].split(",")

    # -- assembly -----------------------------------------------------------

    def assemble(self) -> Optional[Scenario]:
        if "schema_version" not in self.top:
            self.errors.insert(0, "line 1: schema_version is required")
        buses = []
        for name, b in self.buses.items():
            n_rows = max((r for r, _ in b["windows"]), default=-1) + 1
            rows = [[] for _ in range(max(1, n_rows))]
            for r, w in b["windows"]:
                if r < 0:
                    self.err(b["lineno"], f"bus {name}: negative row {r}")
                    continue
                rows[r].append(w)
            buses.append(BusCfg(
                name, b["bitrate"], b["ntu"], b["t_cycle"], b["ref_window"],
                tuple(tuple(r) for r in rows), tuple(b["nodes"]),
                tuple(b["flows"]), b["prop"], b["stuffing"]))
        sync = SyncCfg(
            integration_period_ps=self.top.get("integration_period", 0),
            collection_margin_ps=self.top.get("collection_margin",
                                              20_000_000),
            guard_margin_ps=self.top.get("guard_margin", 2_000_000),
            be_queue_cap=self.top.get("be_queue_cap", 64),
            resync_period_ps=self.top.get("resync_period", 0))
        cfg = SimConfig(tuple(self.nodes), tuple(self.links), sync,
                        tuple(self.tt), tuple(self.rc), tuple(self.be),
                        tuple(buses))
        if self.errors:
            return None
        return Scenario(
            self.name, cfg, self.top.get("seed", 0),
            self.top.get("duration", 0), self.top.get("warmup"),
            self.top.get("drain"), self.top.get("bottleneck"),
            self.top.get("sync_sample", 1_000_000_000), self.sweep)


def _line(p: _Parser, key: str) -> str:
    n = p.lines_of.get(key)
    return f"line {n}: " if n else ""


def _validate(p: _Parser, sc: Scenario) -> list[str]:
    """Cross-reference and protocol-level checks; returns error strings."""
    errors: list[str] = []
    cfg = sc.config
    names = [n.name for n in cfg.nodes]
    if len(set(names)) != len(names):
        dup = sorted(n for n in names if names.count(n) > 1)[0]
        errors.append(f"{_line(p, f'node:{dup}')}duplicate node {dup}")
    node_set = set(names)
    if cfg.nodes and sum(n.role is SyncRole.CM for n in cfg.nodes) != 1:
        errors.append("exactly one node must have the cm role")
    P = cfg.sync.integration_period_ps
    if P <= 0:
        errors.append("integration_period is required")
    for n in cfg.nodes:
        if P > 0 and P % n.t_sys_ps:
            errors.append(f"{_line(p, f'node:{n.name}')}integration period "
                          f"is not a multiple of node {n.name}'s tick")
    for lk in cfg.links:
        for end in (lk.a, lk.b):
            if end not in node_set:
                errors.append(f"{_line(p, f'link:{lk.a}:{lk.b}')}link "
                              f"endpoint {end} is not a node")
    for f in cfg.tt_flows:
        at = _line(p, f"flow:{f.flow_id}")
        if f.sender not in node_set:
            errors.append(f"{at}ttflow {f.flow_id}: unknown sender "
                          f"{f.sender}")
        for r in f.receivers:
            if r not in node_set:
                errors.append(f"{at}ttflow {f.flow_id}: unknown receiver {r}")
        if not 0 <= f.payload_bytes <= ETH_MAX_PAYLOAD_BYTES:
            errors.append(f"{at}ttflow {f.flow_id}: payload outside 0.."
                          f"{ETH_MAX_PAYLOAD_BYTES}")
        if P > 0 and (f.period_ps <= 0 or f.period_ps % P):
            errors.append(f"{at}ttflow {f.flow_id}: period must be a "
                          f"positive multiple of the integration period")
        for off in f.offsets_ps:
            if not 0 <= off < f.period_ps:
                errors.append(f"{at}ttflow {f.flow_id}: offset {off} ps "
                              f"outside the period")
    for f in cfg.rc_flows:
        at = _line(p, f"flow:{f.flow_id}")
        if f.sender not in node_set:
            errors.append(f"{at}rcflow {f.flow_id}: unknown sender "
                          f"{f.sender}")
        for r in f.receivers:
            if r not in node_set:
                errors.append(f"{at}rcflow {f.flow_id}: unknown receiver {r}")
        if f.bag_ps <= 0:
            errors.append(f"{at}rcflow {f.flow_id}: bag must be positive")
    for f in cfg.be_flows:
        at = _line(p, f"flow:{f.flow_id}")
        for end, what in ((f.src, "src"), (f.dst, "dst")):
            if end not in node_set:
                errors.append(f"{at}beflow {f.flow_id}: unknown {what} "
                              f"{end}")
    flow_ids = ([f.flow_id for f in cfg.tt_flows]
                + [f.flow_id for f in cfg.rc_flows]
                + [f.flow_id for f in cfg.be_flows]
                + [f.flow_id for b in cfg.buses for f in b.flows])
    if len(set(flow_ids)) != len(flow_ids):
        dup = sorted(i for i in flow_ids if flow_ids.count(i) > 1)[0]
        errors.append(f"{_line(p, f'flow:{dup}')}duplicate flow id {dup}")

    can_node_bus: dict[str, str] = {}
    gw_of_bus: dict[str, str] = {}
    for b in cfg.buses:
        masters = [n for n in b.nodes
                   if n.mode in ("gateway", "standalone_master")]
        if len(masters) != 1:
            errors.append(f"{_line(p, f'bus:{b.name}')}bus {b.name} needs "
                          f"exactly one time master, has {len(masters)}")
        for n in b.nodes:
            at = _line(p, f"cannode:{n.name}")
            if n.name in can_node_bus:
                errors.append(f"{at}CAN node {n.name} on two buses")
            can_node_bus[n.name] = b.name
            if n.mode == "gateway":
                gw_of_bus[b.name] = n.name
                host = next((x for x in cfg.nodes if x.name == n.name), None)
                if host is None or host.kind != "gateway":
                    errors.append(f"{at}gateway {n.name} is not a backbone "
                                  f"gateway node")
        ids = [f.can_id for f in b.flows]
        if len(set(ids)) != len(ids):
            errors.append(f"{_line(p, f'bus:{b.name}')}bus {b.name} has "
                          f"duplicate CAN ids")
        for f in b.flows:
            at = _line(p, f"flow:{f.flow_id}")
            if not 1 <= f.can_id <= CAN_MAX_ID:
                errors.append(f"{at}canflow {f.flow_id}: id outside "
                              f"1..{CAN_MAX_ID}")
            if f.src not in {n.name for n in b.nodes}:
                errors.append(f"{at}canflow {f.flow_id}: src {f.src} not on "
                              f"bus {b.name}")
    encap_pairs = {(f.sender, f.receivers[0])
                   for f in cfg.tt_flows if f.encap and len(f.receivers) == 1}
    for b in cfg.buses:
        arb = any(w.kind is WindowKind.ARBITRATION
                  for row in b.rows for w in row)
        owners = {w.owner for row in b.rows for w in row
                  if w.kind is WindowKind.EXCLUSIVE}
        for f in b.flows:
            at = _line(p, f"flow:{f.flow_id}")
            dest_bus = can_node_bus.get(f.dest)
            if dest_bus is None:
                errors.append(f"{at}canflow {f.flow_id}: unknown dest "
                              f"{f.dest}")
                continue
            if f.can_id not in owners and not arb:
                errors.append(f"{at}canflow {f.flow_id}: no window on "
                              f"{b.name} can carry id {f.can_id}")
            if dest_bus != b.name:
                src_gw, dst_gw = gw_of_bus.get(b.name), gw_of_bus.get(dest_bus)
                if not src_gw or not dst_gw:
                    errors.append(f"{at}canflow {f.flow_id}: cross-bus "
                                  f"path needs gateways on both buses")
                elif (src_gw, dst_gw) not in encap_pairs:
                    errors.append(f"{at}canflow {f.flow_id}: no encap "
                                  f"ttflow from {src_gw} to {dst_gw}")
    if sc.duration_ps <= 0:
        errors.append("duration is required")
    if errors:
        return errors

    # Protocol-level build: surfaces config errors with full context, and
    # lets us check per-link TT schedule overlap on the built guard tables.
    try:
        net = Network(cfg)
    except (ValueError, ArithmeticError) as e:
        return [str(e)]
    for key, link in net.links.items():
        spans = sorted(zip(link.guard_starts, link.guard_wires))
        for (s1, w1), (s2, _w2) in zip(spans, spans[1:]):
            if s1 + w1 > s2:
                errors.append(
                    f"TT schedule overlap on link {key[0]}->{key[1]} at "
                    f"{s2} ps within the cluster cycle")
        if spans and spans[-1][0] + spans[-1][1] > net.cluster_ps \
                and (spans[-1][0] + spans[-1][1]) % net.cluster_ps \
                > spans[0][0]:
            errors.append(
                f"TT schedule overlap on link {key[0]}->{key[1]} at the "
                f"cluster wrap")
    return errors


def load_scenario(path: str) -> Scenario:
    """Parse + validate; raises ScenarioError listing every problem."""
    name = os.path.splitext(os.path.basename(path))[0]
    p = _Parser(name)
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                p.feed(lineno, line)
    sc = p.assemble()
    if sc is None:
        raise ScenarioError(p.errors)
    errors = _validate(p, sc)
    if errors:
        raise ScenarioError(errors)
    return sc
