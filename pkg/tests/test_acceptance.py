"""End-to-end acceptance: eight numbered requirements, one test each.

Requirements 4 and 5 drive full parameter sweeps and dominate the suite's
runtime (a few minutes together); everything else is seconds.  Expected
values were captured from verified runs of this code base and the checks
state the tolerance they enforce next to each assert.
"""

import os
import time
from collections import Counter

import pytest

import test_gateway
import test_kernel
import test_tte
import test_ttcan
from ttnetsim.cli import main as cli_main
from ttnetsim.experiments import (
    experiment_fig6,
    experiment_fig7,
    experiment_sync_trace,
    run_single,
)
from ttnetsim.scenario import load_scenario, parse_duration_ps
from ttnetsim.tte import eth_frame_duration, pcf_duration
from ttnetsim.ttcan import COUNTS_PER_NTU, can_frame_duration

SCN_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "ttnetsim",
                       "scenarios")


def scn(name):
    return os.path.join(SCN_DIR, name)


def by_category(summaries):
    """(mean of per-flow average latency, max jitter range) per category."""
    out = {}
    for cat in ("tt", "ttcan", "rc", "be"):
        fl = [f for f in summaries.values() if f.category == cat]
        if fl:
            out[cat] = (sum(f.avg_latency_ps for f in fl) / len(fl),
                        max(f.jitter_range_ps for f in fl))
    return out


# -- 1: two free-running CAN clocks converge through drift correction -------

def test_criterion_1_drift_factor_pulls_slave_onto_master():
    t0 = time.monotonic()
    sc = load_scenario(scn("twoclock.scn"))
    res = run_single(sc)
    dfs = [v for (_, n, k, v) in res.net.metrics.sync_rows
           if n == "probe" and k == "can_df_ppb"]   # (df - 1) in ppb
    assert len(dfs) >= 6
    # first correction reads the full relative drift: df -> 1 + 2e-4,
    # resolved to one counter grain (10 ns per count / 24.576 ms cycle
    # = 407 ppb); measured first sample: 199788 ppb
    assert abs(dfs[0] - 200_000) <= 407
    # steady state: df equals 1 within 1e-6 from the third cycle on
    # (measured: alternates +-406 ppb, the quantization floor)
    assert all(abs(v) <= 1000 for v in dfs[3:])
    # the probe's effective counter rate lands on the master's
    master = res.net.can_nodes["master"].counter.ntu_true_ps
    probe = res.net.can_nodes["probe"].counter.ntu_true_ps
    assert abs(probe / master - 1) <= 1e-6          # measured: 1.95e-7
    assert time.monotonic() - t0 < 1.0


# -- 2: gateway counter gap against the synchronized backbone ---------------

def test_criterion_2_gateway_resync_gap_bounded_and_shrinking():
    t0 = time.monotonic()
    sc = load_scenario(scn("gwsync.scn"))
    res = run_single(sc)
    gaps = [v for (_, n, k, v) in res.net.metrics.sync_rows
            if n == "gw" and k == "t_gap_counts"]
    assert len(gaps) >= 12
    bus = sc.config.buses[0]
    count_ps = bus.ntu_ps // COUNTS_PER_NTU        # 1 us per count here
    # 200 ppm of one 24.576 ms cycle (4.92 us) plus two NTU of counter
    # quantization, expressed in counts: 20
    bound = (4_920_000 + 2 * bus.ntu_ps) // count_ps
    assert abs(gaps[0]) <= bound                   # measured first gap: -5
    # |gap| may only shrink until it reaches the +-2 count quantization
    # band, and must stay inside the band afterwards
    band = 2
    k = next(i for i, v in enumerate(gaps) if abs(v) <= band)
    assert all(abs(gaps[i + 1]) <= abs(gaps[i]) for i in range(k))
    assert all(abs(v) <= band for v in gaps[k:])
    assert time.monotonic() - t0 < 5.0


# -- 3: every CAN station tracks the backbone timebase end to end -----------

def test_criterion_3_global_time_agreement_across_gateways():
    t0 = time.monotonic()
    sc = load_scenario(scn("fig1.scn"))
    res = experiment_sync_trace(sc)
    assert res.sync_rows
    can_stations = {c.name for b in sc.config.buses for c in b.nodes}
    seen = {n for (_, n, _) in res.sync_rows}
    assert can_stations <= seen
    # 200 ppm over one 24.576 ms bus cycle + 200 ppm over one 3.072 ms
    # backbone cycle + counter/tick quantization: 5.6 us budget
    worst = max(abs(e) for (_, n, e) in res.sync_rows if n in can_stations)
    assert worst <= 5_600_000                      # measured: 1.70 us
    assert time.monotonic() - t0 < 60.0


# -- 4: latency and jitter against offered load ------------------------------

def test_criterion_4_latency_jitter_flat_and_ordered_across_load():
    t0 = time.monotonic()
    sc = load_scenario(scn("fig1.scn"))
    _rows, runs = experiment_fig6(sc)
    wall = time.monotonic() - t0
    assert [u for u, _ in runs] == list(range(10, 96, 5))
    table = {u: by_category(res.summaries) for u, res in runs}

    # (a) scheduled traffic ignores load: every point within 1% of the mean
    for cat in ("tt", "ttcan"):
        avgs = [table[u][cat][0] for u in table]
        mean = sum(avgs) / len(avgs)
        assert max(abs(a - mean) / mean for a in avgs) < 0.01  # measured: 0.0
    # (b) jitter ordering under high load
    for u in table:
        if u >= 85:
            rng = {c: table[u][c][1] for c in table[u]}
            assert rng["tt"] < rng["ttcan"] < rng["rc"] < rng["be"], (u, rng)
    # (c) jitter bands; measured: tt 2.84 us, ttcan 33.17 us at all points
    for u in table:
        assert 500_000 <= table[u]["tt"][1] <= 10_000_000, u
        assert 5_000_000 <= table[u]["ttcan"][1] <= 100_000_000, u
    # (d) the bus hop costs latency: ttcan above tt everywhere
    for u in table:
        assert table[u]["ttcan"][0] > table[u]["tt"][0], u
    assert wall < 600.0


# -- 5: sync overhead against the integration period ------------------------

def test_criterion_5_throughput_tracks_sync_overhead_analytically():
    t0 = time.monotonic()
    sc = load_scenario(scn("worstcase.scn"))
    _rows, runs = experiment_fig7(sc)
    wall = time.monotonic() - t0
    toks = [t for t, _ in runs]
    assert toks == ["1ms", "3ms", "10ms"]
    thr = {}
    rng = {}
    for tok, res in runs:
        for cat in ("tt", "ttcan", "rc", "be"):
            fl = [f for f in res.summaries.values() if f.category == cat]
            thr[tok, cat] = sum(f.throughput_bps for f in fl)
            rng[tok, cat] = max(f.jitter_range_ps for f in fl)

    # (a) scheduled classes don't feel the sweep: spread < 0.1%
    for cat in ("tt", "ttcan"):
        vals = [thr[t, cat] for t in toks]
        spread = (max(vals) - min(vals)) / max(vals)
        assert spread < 0.001, (cat, spread)   # measured: 0.009%, 0.005%

    # (b) best-effort throughput gain between sweep points equals the
    # sync bandwidth released: each measured egress carries exactly one
    # 84-byte sync broadcast per integration cycle (the collection-step
    # frames ride the gateway uplinks, which carry no best-effort load),
    # so the analytical delta is 2 links * 672 bits * d(1/P), within 5%
    pcf_bits = pcf_duration(100_000_000) * 100_000_000 // 10**12
    assert pcf_bits == 672
    for a, b in zip(toks, toks[1:]):
        pa = parse_duration_ps(a)
        pb = parse_duration_ps(b)
        expect = 2 * pcf_bits * (10**12 / pa - 10**12 / pb)
        got = thr[b, "be"] - thr[a, "be"]
        assert abs(got - expect) / expect < 0.05, (a, b, got, expect)
        # measured: 1ms->3ms 2.44% low, 3ms->10ms 2.88% low (payload
        # bits per wire bit is 12000/12304; frame boundaries eat the rest)

    # (c) corrections scale with the period, so jitter may only grow
    # with P: non-increasing as the period shrinks
    for cat in ("tt", "rc"):
        vals = [rng[t, cat] for t in toks]      # toks sorted small -> large
        assert all(x <= y for x, y in zip(vals, vals[1:])), (cat, vals)
    assert wall < 600.0


# -- 6: frame timing constants -----------------------------------------------

def test_criterion_6_frame_timing_oracles_exact():
    assert can_frame_duration(8, 1_000_000) == 111_000_000
    assert pcf_duration(100_000_000) == 6_720_000
    assert eth_frame_duration(500, 100_000_000) == 43_040_000


# -- 7: bit-identical reruns --------------------------------------------------

def test_criterion_7_same_seed_reruns_byte_identical(tmp_path):
    names = sorted(f for f in os.listdir(SCN_DIR) if f.endswith(".scn"))
    assert names
    for name in names:
        outs = []
        for attempt in ("one", "two"):
            d = tmp_path / f"{name}-{attempt}"
            trace = str(d / "events.txt")
            rc = cli_main(["run", scn(name), "--seed", "7",
                           "--duration", "300ms", "--out", str(d),
                           "--trace", trace])
            assert rc == 0
            csv_path = d / f"{os.path.splitext(name)[0]}.csv"
            outs.append((csv_path.read_bytes(),
                         (d / "events.txt").read_bytes()))
        assert outs[0][0] == outs[1][0], f"{name}: csv differs"
        assert outs[0][1] == outs[1][1], f"{name}: trace differs"
        assert len(outs[0][1]) > 0


# -- 8: randomized property suites --------------------------------------------

def test_criterion_8_property_suites_each_cover_100_cases():
    test_kernel.test_event_order_determinism_100_random_cases()
    test_ttcan.test_counter_wrap_matches_unbounded_oracle_100_cases()
    test_ttcan.test_arbitration_lowest_id_wins_any_order_100_cases()
    test_tte.test_route_tree_multicast_conservation_100_cases()
    test_gateway.test_encap_fifo_partition_and_round_trip_100_cases()
    test_tte.test_cluster_cycle_is_least_common_multiple_100_cases()
