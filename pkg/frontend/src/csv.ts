/**
 * CSV intake for the chart tool.
 *
 * The simulator writes plain headered CSV; this wrapper parses it, keeps
 * every cell as a string (the renderer plots columns verbatim and decides
 * per kind what to parse), and turns structural problems into errors a
 * user can act on — above all, *which* required column is missing.
 */

import Papa from "papaparse";

export class CsvError extends Error {}

export interface CsvTable {
  columns: string[];
  rows: Record<string, string>[];
}

export function parseCsv(text: string): CsvTable {
  const res = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (res.errors.length > 0) {
    const e = res.errors[0];
    const where = e.row == null ? "" : ` at data row ${e.row + 1}`;
    throw new CsvError(`malformed CSV${where}: ${e.message}`);
  }
  return { columns: res.meta.fields ?? [], rows: res.data };
}

/** Throws naming every absent column, then rejects header-only files. */
export function requireColumns(table: CsvTable, needed: string[]): void {
  const missing = needed.filter((c) => !table.columns.includes(c));
  if (missing.length > 0) {
    throw new CsvError(`missing required column(s): ${missing.join(", ")}`);
  }
  if (table.rows.length === 0) {
    throw new CsvError("no data rows");
  }
}
