"""Watch a free-running CAN clock lock onto its time master.

Two stations share one bus; the probe's oscillator runs 200 ppm fast.
Every basic cycle it measures the gap between its own sync mark and the
master's reference mark, turns the gap into a drift factor, and scales
its time-unit ratio.  The first correction reads the full 200 ppm; after
that the factor hovers one counter grain around 1.
"""

from ttnetsim.experiments import run_single
from ttnetsim.scenario import load_scenario
from ttnetsim.scenarios import path as scenario_path


def main():
    sc = load_scenario(scenario_path("twoclock.scn"))
    res = run_single(sc)

    print("cycle   df - 1 (ppb)")
    dfs = [(t, v) for (t, n, k, v) in res.net.metrics.sync_rows
           if n == "probe" and k == "can_df_ppb"]
    for i, (t, v) in enumerate(dfs):
        bar = "#" * min(60, abs(v) // 4000)
        print(f"{i:5d}   {v:12d}  {bar}")

    master = res.net.can_nodes["master"].counter
    probe = res.net.can_nodes["probe"].counter
    rel = float(abs(probe.ntu_true_ps / master.ntu_true_ps - 1))
    print(f"\nmaster NTU on the wire: {float(master.ntu_true_ps):.4f} ps")
    print(f"probe  NTU on the wire: {float(probe.ntu_true_ps):.4f} ps")
    print(f"relative rate error:    {rel:.2e}")


if __name__ == "__main__":
    main()
