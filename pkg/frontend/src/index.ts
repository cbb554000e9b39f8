export { CsvError, parseCsv, requireColumns } from "./csv.js";
export type { CsvTable } from "./csv.js";
export { CATEGORY_COLORS, PALETTE, fmtTick, renderChart } from "./chart.js";
export type { ChartSpec, Point, Series } from "./chart.js";
export { KINDS, buildSpec, resolveKind, sweepValueToNumber } from "./kinds.js";
export type { Kind } from "./kinds.js";
export { runCli } from "./cli.js";
