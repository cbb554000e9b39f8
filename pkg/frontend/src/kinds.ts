/**
 * Chart kinds: which columns a kind needs and how its series are built.
 *
 * Flow kinds (latency / jitter / throughput) read the per-flow summary
 * CSV: one polyline per flow, colored and legended by traffic category,
 * x = the sweep value.  `fig6` and `fig7` are aliases for the charts
 * those sweeps are usually drawn with.  sync-trace reads the clock-error
 * CSV: one polyline per node over time.
 *
 * Values are plotted verbatim — no averaging, no unit rescaling; only
 * axis tick labels get compact formatting.
 */

import { CATEGORY_COLORS, ChartSpec, PALETTE, Series } from "./chart.js";
import { CsvError, parseCsv, requireColumns } from "./csv.js";

export type Kind = "latency" | "jitter" | "throughput" | "sync-trace";

export const KINDS: Kind[] = ["latency", "jitter", "throughput", "sync-trace"];

const ALIASES: Record<string, Kind> = { fig6: "latency", fig7: "throughput" };

export function resolveKind(token: string): Kind | undefined {
  if ((KINDS as string[]).includes(token)) return token as Kind;
  return ALIASES[token];
}

const FLOW_KIND = {
  latency: { column: "avg_latency_us", yLabel: "average latency (us)" },
  jitter: { column: "jitter_range_us", yLabel: "jitter range (us)" },
  throughput: { column: "throughput_bps", yLabel: "throughput (bit/s)" },
} as const;

const FLOW_BASE_COLUMNS = ["scenario", "sweep_param", "sweep_value",
                           "flow_id", "category"];
const CATEGORY_ORDER = ["tt", "ttcan", "rc", "be"];

/** "10" -> 10; "3ms" -> 3; "500us" -> 0.5; "2s" -> 2000. */
export function sweepValueToNumber(token: string): number {
  const m = /^([0-9.]+)(us|ms|s)?$/.exec(token.trim());
  if (!m) throw new CsvError(`sweep_value ${JSON.stringify(token)} is not a number or duration`);
  const scale = { us: 1e-3, ms: 1, s: 1e3, "": 1 }[m[2] ?? ""]!;
  return parseFloat(m[1]) * scale;
}

function xLabelFor(param: string): string {
  if (param === "utilization") return "offered load (% of bottleneck)";
  if (param === "integration_period") return "integration period (ms)";
  return param;
}

export function buildSpec(kind: Kind, csvText: string): ChartSpec {
  return kind === "sync-trace" ? syncSpec(csvText) : flowSpec(kind, csvText);
}

function flowSpec(kind: keyof typeof FLOW_KIND, csvText: string): ChartSpec {
  const { column, yLabel } = FLOW_KIND[kind];
  const table = parseCsv(csvText);
  requireColumns(table, [...FLOW_BASE_COLUMNS, column]);

  const byFlow = new Map<string, { category: string; points: { x: number; y: number }[] }>();
  for (const row of table.rows) {
    const y = parseFloat(row[column]);
    if (Number.isNaN(y)) continue;           // flow had no samples there
    const x = sweepValueToNumber(row.sweep_value);
    let f = byFlow.get(row.flow_id);
    if (!f) {
      f = { category: row.category, points: [] };
      byFlow.set(row.flow_id, f);
    }
    f.points.push({ x, y });
  }
  if (byFlow.size === 0) throw new CsvError(`column ${column} holds no values`);

  // fixed order: category rank, then flow id; legend = first of category
  const flows = [...byFlow.entries()].sort(([ida, a], [idb, b]) => {
    const ra = CATEGORY_ORDER.indexOf(a.category);
    const rb = CATEGORY_ORDER.indexOf(b.category);
    return ra !== rb ? ra - rb : ida < idb ? -1 : 1;
  });
  const seen = new Set<string>();
  const series: Series[] = flows.map(([_id, f]) => {
    const first = !seen.has(f.category);
    seen.add(f.category);
    return {
      label: f.category.toUpperCase(),
      color: CATEGORY_COLORS[f.category] ?? "#888",
      points: f.points,
      legend: first,
    };
  });

  const first = table.rows[0];
  return {
    title: `${first.scenario}: ${yLabel.replace(/ \(.*/, "")} by traffic class`,
    subtitle: `${table.rows.length} flow rows, one line per flow`,
    xLabel: xLabelFor(first.sweep_param),
    yLabel,
    series,
    yMin: 0,
  };
}

function syncSpec(csvText: string): ChartSpec {
  const table = parseCsv(csvText);
  requireColumns(table, ["scenario", "t_us", "node", "error_us"]);

  const byNode = new Map<string, { x: number; y: number }[]>();
  for (const row of table.rows) {
    let pts = byNode.get(row.node);
    if (!pts) {
      pts = [];
      byNode.set(row.node, pts);
    }
    pts.push({ x: parseFloat(row.t_us) / 1e3, y: parseFloat(row.error_us) });
  }

  const nodes = [...byNode.keys()].sort();
  const series: Series[] = nodes.map((n, i) => ({
    label: n,
    color: PALETTE[i % PALETTE.length],
    points: byNode.get(n)!,
    legend: true,
    width: 1,
  }));
  return {
    title: `${table.rows[0].scenario}: clock error per node`,
    subtitle: `${table.rows.length} samples, ${nodes.length} nodes`,
    xLabel: "time (ms)",
    yLabel: "error vs master (us)",
    series,
  };
}
