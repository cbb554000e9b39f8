/**
 * Deterministic SVG line charts.
 *
 * No timestamps, no randomness, no locale: the same ChartSpec always
 * serializes to the same bytes.  Coordinates are fixed to one decimal,
 * series render in spec order, and the legend lists exactly the series
 * flagged for it (one entry per traffic category, or one per node on
 * clock-error charts).
 */

export interface Point {
  x: number;
  y: number;
}

export interface Series {
  label: string;
  color: string;
  points: Point[];
  /** include in the legend (first series of each group) */
  legend: boolean;
  width?: number;
  opacity?: number;
}

export interface ChartSpec {
  title: string;
  subtitle: string;
  xLabel: string;
  yLabel: string;
  series: Series[];
  yMin?: number;
}

// fixed styling: category colors first, then a cycle for per-node series
export const CATEGORY_COLORS: Record<string, string> = {
  tt: "#4361ee",
  ttcan: "#e63946",
  rc: "#2d6a4f",
  be: "#f77f00",
};

export const PALETTE = [
  "#4361ee", "#e63946", "#2d6a4f", "#f77f00", "#9d4edd", "#0096c7",
  "#bc6c25", "#6a994e", "#d62828", "#5f0f40", "#386641", "#7209b7",
  "#118ab2", "#ef476f", "#073b4c", "#e09f3e", "#540b0e",
];

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((n) => n >= rough) ?? rough;
  const start = Math.ceil(min / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= max + step * 1e-9; v += step) ticks.push(v);
  return ticks;
}

/** 1200000 -> "1.2M": keeps axis labels readable without rescaling data. */
export function fmtTick(v: number): string {
  const abs = Math.abs(v);
  if (abs >= 1e9) return trim(v / 1e9) + "G";
  if (abs >= 1e6) return trim(v / 1e6) + "M";
  if (abs >= 1e4) return trim(v / 1e3) + "k";
  return trim(v);
}

function trim(v: number): string {
  // fixed, locale-free: up to 2 decimals with trailing zeros dropped
  const s = v.toFixed(2);
  return s.replace(/\.?0+$/, "") || "0";
}

export function renderChart(spec: ChartSpec): string {
  const W = 720;
  const ml = 64, mr = 20, mt = 34, mb = 46;
  const pw = W - ml - mr;
  const ph = 230;
  const H = mt + ph + mb;

  const pts = spec.series.flatMap((s) => s.points);
  if (pts.length === 0) throw new Error("nothing to plot");
  const xMin = Math.min(...pts.map((p) => p.x));
  const xMax = Math.max(...pts.map((p) => p.x));
  const yLo = spec.yMin ?? Math.min(...pts.map((p) => p.y), 0);
  const yHiRaw = Math.max(...pts.map((p) => p.y));
  const yHi = yHiRaw === yLo ? yLo + 1 : yHiRaw + (yHiRaw - yLo) * 0.06;
  const xOf = (v: number) => ml + ((v - xMin) / (xMax - xMin || 1)) * pw;
  const yOf = (v: number) => mt + ph - ((v - yLo) / (yHi - yLo)) * ph;

  let s = `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" font-family="Helvetica, Arial, sans-serif">\n`;
  s += `<rect width="${W}" height="${H}" fill="#fff"/>\n`;
  s += `<text x="${ml}" y="${mt - 18}" font-size="11" font-weight="600" fill="#222">${esc(spec.title)}</text>\n`;
  s += `<text x="${ml}" y="${mt - 7}" font-size="7.5" fill="#888">${esc(spec.subtitle)}</text>\n`;
  s += `<defs><clipPath id="plot"><rect x="${ml}" y="${mt}" width="${pw}" height="${ph}"/></clipPath></defs>\n`;

  const yTicks = niceTicks(yLo, yHi, 5);
  for (const v of yTicks) {
    const y = yOf(v).toFixed(1);
    s += `<line x1="${ml}" y1="${y}" x2="${ml + pw}" y2="${y}" stroke="#eee" stroke-width="0.5"/>\n`;
  }

  for (const sr of spec.series) {
    const ordered = [...sr.points].sort((a, b) => a.x - b.x);
    const coords = ordered
      .map((p) => `${xOf(p.x).toFixed(1)},${yOf(p.y).toFixed(1)}`)
      .join(" ");
    if (ordered.length === 1) {
      s += `<circle clip-path="url(#plot)" cx="${xOf(ordered[0].x).toFixed(1)}" cy="${yOf(ordered[0].y).toFixed(1)}" r="2" fill="${sr.color}"/>\n`;
    } else {
      s += `<polyline clip-path="url(#plot)" fill="none" stroke="${sr.color}" stroke-width="${sr.width ?? 1.2}" opacity="${sr.opacity ?? 1}" points="${coords}"/>\n`;
    }
  }

  // axes
  s += `<line x1="${ml}" y1="${mt}" x2="${ml}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;
  s += `<line x1="${ml}" y1="${mt + ph}" x2="${ml + pw}" y2="${mt + ph}" stroke="#333" stroke-width="0.7"/>\n`;

  for (const v of niceTicks(xMin, xMax, 8)) {
    const x = xOf(v).toFixed(1);
    s += `<line x1="${x}" y1="${mt + ph}" x2="${x}" y2="${mt + ph + 3}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${x}" y="${mt + ph + 13}" text-anchor="middle" font-size="7" fill="#666">${esc(fmtTick(v))}</text>\n`;
  }
  s += `<text x="${ml + pw / 2}" y="${H - 6}" text-anchor="middle" font-size="8.5" fill="#444">${esc(spec.xLabel)}</text>\n`;

  for (const v of yTicks) {
    const y = yOf(v);
    s += `<line x1="${ml - 3}" y1="${y.toFixed(1)}" x2="${ml}" y2="${y.toFixed(1)}" stroke="#333" stroke-width="0.5"/>\n`;
    s += `<text x="${ml - 5}" y="${(y + 2.5).toFixed(1)}" text-anchor="end" font-size="7" fill="#666">${esc(fmtTick(v))}</text>\n`;
  }
  s += `<text x="14" y="${mt + ph / 2}" text-anchor="middle" font-size="8.5" fill="#444" transform="rotate(-90,14,${mt + ph / 2})">${esc(spec.yLabel)}</text>\n`;

  // legend: columns of up to 10 entries so many-node charts stay inside
  const entries = spec.series.filter((sr) => sr.legend);
  const perCol = 10;
  const nCols = Math.ceil(entries.length / perCol);
  const colW = Math.min(
    120,
    Math.max(...entries.map((e) => e.label.length), 4) * 4.6 + 26,
  );
  const boxW = nCols * colW + 8;
  const boxH = Math.min(entries.length, perCol) * 11 + 6;
  const bx = ml + pw - boxW - 4;
  const by = mt + 4;
  s += `<rect x="${bx}" y="${by}" width="${boxW}" height="${boxH}" rx="2" fill="#fff" fill-opacity="0.85"/>\n`;
  entries.forEach((e, i) => {
    const cx = bx + 6 + Math.floor(i / perCol) * colW;
    const cy = by + 10 + (i % perCol) * 11;
    s += `<line x1="${cx}" y1="${cy}" x2="${cx + 14}" y2="${cy}" stroke="${e.color}" stroke-width="1.5"/>\n`;
    s += `<text x="${cx + 18}" y="${cy + 2.5}" font-size="7" fill="#444">${esc(e.label)}</text>\n`;
  });

  s += `</svg>\n`;
  return s;
}
