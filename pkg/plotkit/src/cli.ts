#!/usr/bin/env node
/**
 * plotkit <arrows|losstime|nullcdf|surface|all> --metrics DIR --out DIR [--metric NAME]
 *
 * Reads only files produced by the experiment pipeline (report.tsv,
 * history_*.tsv, nullcdf_*.tsv, surface_*.tsv) and writes deterministic SVG
 * figures into the output directory.
 */

import { existsSync, mkdirSync, readdirSync, writeFileSync } from "fs";
import { join } from "path";

import { EmptySelection, plotArrows, plotLossVsTime, plotNullCdf, plotSurface } from "./plots.js";
import { readHistory, readNullCdf, readReport, readSurface } from "./tables.js";

interface Args {
  command: string;
  metrics: string;
  out: string;
  metric: string | null;
}

function parseArgs(argv: string[]): Args {
  const [command, ...rest] = argv;
  const args: Args = { command: command ?? "", metrics: "", out: "", metric: null };
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i];
    const value = rest[i + 1];
    if (value === undefined) throw new Error(`missing value for ${key}`);
    if (key === "--metrics") args.metrics = value;
    else if (key === "--out") args.out = value;
    else if (key === "--metric") args.metric = value;
    else throw new Error(`unknown flag ${key}`);
  }
  if (!args.command) throw new Error("usage: plotkit <arrows|losstime|nullcdf|surface|all> --metrics DIR --out DIR");
  if (!args.metrics || !args.out) throw new Error("--metrics and --out are required");
  return args;
}

function listFiles(dir: string, prefix: string): string[] {
  return readdirSync(dir)
    .filter((f) => f.startsWith(prefix) && f.endsWith(".tsv"))
    .sort()
    .map((f) => join(dir, f));
}

export function runArrows(metricsDir: string, outDir: string, metric: string | null): string[] {
  const reportPath = join(metricsDir, "report.tsv");
  if (!existsSync(reportPath)) throw new Error(`${reportPath} not found; run the report command first`);
  const rows = readReport(reportPath);
  const metrics = metric ? [metric] : [...new Set(rows.filter((r) => r.paired).map((r) => r.metric))].sort();
  const written: string[] = [];
  for (const m of metrics) {
    const svg = plotArrows(rows, m);
    const path = join(outDir, `arrows_${m}.svg`);
    writeFileSync(path, svg);
    written.push(path);
  }
  if (written.length === 0) throw new EmptySelection("no paired metrics to plot");
  return written;
}

export function runLossTime(metricsDir: string, outDir: string): string[] {
  const files = listFiles(metricsDir, "history_");
  const curves = files.map(readHistory);
  const svg = plotLossVsTime(curves);
  const path = join(outDir, "loss_vs_time.svg");
  writeFileSync(path, svg);
  return [path];
}

export function runNullCdf(metricsDir: string, outDir: string): string[] {
  const written: string[] = [];
  for (const file of listFiles(metricsDir, "nullcdf_")) {
    const series = readNullCdf(file);
    const tag = file.split("/").pop()!.replace(/^nullcdf_/, "").replace(/\.tsv$/, "");
    const path = join(outDir, `nullcdf_${tag}.svg`);
    writeFileSync(path, plotNullCdf(series));
    written.push(path);
  }
  if (written.length === 0) throw new EmptySelection("no nullcdf tables found");
  return written;
}

export function runSurface(metricsDir: string, outDir: string): string[] {
  const written: string[] = [];
  for (const file of listFiles(metricsDir, "surface_")) {
    const surface = readSurface(file);
    const tag = file.split("/").pop()!.replace(/^surface_/, "").replace(/\.tsv$/, "");
    for (const evaluator of surface.gls.keys()) {
      const path = join(outDir, `surface_${tag}_${evaluator}.svg`);
      writeFileSync(path, plotSurface(surface, evaluator));
      written.push(path);
    }
  }
  if (written.length === 0) throw new EmptySelection("no surface tables found");
  return written;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 2;
  }
  mkdirSync(args.out, { recursive: true });
  const tasks: Record<string, () => string[]> = {
    arrows: () => runArrows(args.metrics, args.out, args.metric),
    losstime: () => runLossTime(args.metrics, args.out),
    nullcdf: () => runNullCdf(args.metrics, args.out),
    surface: () => runSurface(args.metrics, args.out),
  };
  const selected = args.command === "all" ? Object.keys(tasks) : [args.command];
  if (selected.some((c) => !(c in tasks))) {
    console.error(`unknown subcommand ${args.command}`);
    return 2;
  }
  try {
    for (const name of selected) {
      for (const path of tasks[name]()) console.log(`wrote ${path}`);
    }
  } catch (err) {
    if (err instanceof EmptySelection) {
      console.error(`empty selection: ${err.message}`);
      return 3;
    }
    console.error(String(err instanceof Error ? (err.stack ?? err.message) : err));
    return 1;
  }
  return 0;
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js") || process.argv[1]?.endsWith("cli.ts");
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
