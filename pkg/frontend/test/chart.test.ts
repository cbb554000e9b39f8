import { describe, expect, it } from "vitest";

import { fmtTick, renderChart } from "../src/chart.js";
import { buildSpec, resolveKind, sweepValueToNumber } from "../src/kinds.js";

const FIG6 = [
  "scenario,sweep_param,sweep_value,flow_id,category,avg_latency_us,jitter_range_us,stddev_us,throughput_bps,delivered,dropped",
  "fig1,utilization,10,tt_probe,tt,15.638,2.841,1.360,260222.222,1171,0",
  "fig1,utilization,10,cf_b1,ttcan,2126.732,33.174,11.2,5208.333,146,0",
  "fig1,utilization,10,rc_cam,rc,35.507,85.758,30.0,781250.000,1757,0",
  "fig1,utilization,10,be_bulk,be,133.656,127.815,40.1,19531250.000,8789,0",
  "fig1,utilization,50,tt_probe,tt,15.638,2.841,1.360,260222.222,1171,0",
  "fig1,utilization,50,cf_b1,ttcan,2126.732,33.174,11.2,5208.333,146,0",
  "fig1,utilization,50,rc_cam,rc,80.799,107.083,33.0,781250.000,1757,0",
  "fig1,utilization,50,be_bulk,be,134.880,134.069,41.0,48828125.000,21972,0",
].join("\n");

describe("kind plumbing", () => {
  it("accepts the four kinds plus the sweep aliases", () => {
    expect(resolveKind("latency")).toBe("latency");
    expect(resolveKind("sync-trace")).toBe("sync-trace");
    expect(resolveKind("fig6")).toBe("latency");
    expect(resolveKind("fig7")).toBe("throughput");
    expect(resolveKind("pie")).toBeUndefined();
  });

  it("reads sweep values as numbers or durations", () => {
    expect(sweepValueToNumber("45")).toBe(45);
    expect(sweepValueToNumber("3ms")).toBe(3);
    expect(sweepValueToNumber("500us")).toBe(0.5);
    expect(sweepValueToNumber("2s")).toBe(2000);
    expect(() => sweepValueToNumber("fast")).toThrow(/sweep_value/);
  });

  it("compacts large tick labels only", () => {
    expect(fmtTick(0.5)).toBe("0.5");
    expect(fmtTick(95)).toBe("95");
    expect(fmtTick(48828125)).toBe("48.83M");
    expect(fmtTick(2_000_000_000)).toBe("2G");
  });
});

describe("renderChart", () => {
  it("is byte-stable for the same input", () => {
    const a = renderChart(buildSpec("latency", FIG6));
    const b = renderChart(buildSpec("latency", FIG6));
    expect(a).toBe(b);
  });

  it("draws one line per flow, one legend entry per category", () => {
    const svg = renderChart(buildSpec("jitter", FIG6));
    expect(svg.match(/<polyline/g)).toHaveLength(4);
    for (const label of ["TT", "TTCAN", "RC", "BE"]) {
      expect(svg).toContain(`>${label}</text>`);
    }
    expect(svg).toContain("jitter range (us)");
    expect(svg).toContain("offered load");
  });

  it("plots column values verbatim, not re-derived statistics", () => {
    // two flows of one category keep separate lines even when one would
    // average away; the chart's y extent must reach the larger flow
    const twoTt = FIG6.replace("cf_b1,ttcan,2126.732",
                               "tt_late,tt,400.0");
    const spec = buildSpec("latency", twoTt);
    const tt = spec.series.filter((s) => s.label === "TT");
    expect(tt).toHaveLength(2);
    expect(tt.filter((s) => s.legend)).toHaveLength(1);
  });

  it("keeps the carried scenario name in the title", () => {
    const spec = buildSpec("throughput", FIG6);
    expect(spec.title).toMatch(/^fig1: throughput/);
  });
});
