"""Price of synchronization: sync frames vs best-effort throughput.

The backbone exchanges clock-sync frames every integration period, so a
shorter period buys tighter clocks with bandwidth.  On a saturated link
the cost is visible one-for-one: every sync broadcast displaces exactly
one best-effort frame's worth of wire time.

This demo sweeps the integration period and compares the measured
best-effort throughput change against the closed form
(links x 672 wire bits x change in cycles/second).  Expect a few
percent gap at this short duration; the 8 s runs used by the test suite
land under 3%.
"""

from ttnetsim.experiments import experiment_fig7
from ttnetsim.scenario import load_scenario, parse_duration_ps
from ttnetsim.scenarios import path as scenario_path


def main():
    sc = load_scenario(scenario_path("worstcase.scn"))
    _rows, runs = experiment_fig7(sc, duration=2_000_000_000_000)

    be = {}
    for tok, res in runs:
        fl = [f for f in res.summaries.values() if f.category == "be"]
        be[tok] = sum(f.throughput_bps for f in fl)
        print(f"P = {tok:>4}: best-effort {be[tok] / 1e6:8.4f} Mb/s")

    toks = [t for t, _ in runs]
    print()
    for a, b in zip(toks, toks[1:]):
        got = be[b] - be[a]
        cps = lambda t: 1e12 / parse_duration_ps(t)   # cycles per second
        expect = 2 * 672 * (cps(a) - cps(b))
        print(f"{a} -> {b}: regained {got / 1e3:7.2f} kb/s, "
              f"sync math says {expect / 1e3:7.2f} kb/s "
              f"({100 * (got - expect) / expect:+.1f}%)")


if __name__ == "__main__":
    main()
