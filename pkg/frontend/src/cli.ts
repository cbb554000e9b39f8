#!/usr/bin/env node
/**
 * render --kind <latency|jitter|throughput|sync-trace> --in <csv> --out <svg>
 *
 * One chart per invocation.  `fig6`/`fig7` are accepted as kind aliases
 * (latency and throughput respectively).  Exit codes: 0 written,
 * 1 bad input data, 2 bad usage.
 */

import { mkdirSync, readFileSync, realpathSync, writeFileSync } from "node:fs";
import path from "node:path";
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { renderChart } from "./chart.js";
import { CsvError } from "./csv.js";
import { KINDS, buildSpec, resolveKind } from "./kinds.js";

const USAGE =
  "usage: render --kind <" + KINDS.join("|") + "> --in <csv> --out <svg>";

export function runCli(argv: string[]): number {
  // also reachable as `plot-reports render ...`
  const args = argv[0] === "render" ? argv.slice(1) : argv;
  let values: { kind?: string; in?: string; out?: string };
  try {
    values = parseArgs({
      args,
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        out: { type: "string" },
      },
    }).values;
  } catch (e) {
    console.error((e as Error).message);
    console.error(USAGE);
    return 2;
  }
  if (!values.kind || !values.in || !values.out) {
    console.error(USAGE);
    return 2;
  }
  const kind = resolveKind(values.kind);
  if (!kind) {
    console.error(`unknown kind ${JSON.stringify(values.kind)}; ` +
                  `expected one of: ${KINDS.join(", ")}, fig6, fig7`);
    return 2;
  }

  let text: string;
  try {
    text = readFileSync(values.in, "utf-8");
  } catch (e) {
    console.error((e as Error).message);
    return 2;
  }

  try {
    const svg = renderChart(buildSpec(kind, text));
    mkdirSync(path.dirname(path.resolve(values.out)), { recursive: true });
    writeFileSync(values.out, svg);
    console.log(values.out);
    return 0;
  } catch (e) {
    if (e instanceof CsvError) {
      console.error(`${values.in}: ${e.message}`);
      return 1;
    }
    throw e;
  }
}

const entry = process.argv[1];
if (entry &&
    import.meta.url === pathToFileURL(realpathSync(entry)).href) {
  process.exit(runCli(process.argv.slice(2)));
}
