/**
 * Readers for the experiment pipeline's tab-separated outputs.
 *
 * Every file follows the same convention: optional `# key=value` comment
 * header lines, then a header row of column names, then data rows.
 */

import { readFileSync } from "fs";

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
  meta: Record<string, string>;
}

export function readTable(path: string): Table {
  const text = readFileSync(path, "utf8");
  const meta: Record<string, string> = {};
  const rows: Record<string, string>[] = [];
  let columns: string[] | null = null;
  for (const raw of text.split("\n")) {
    const line = raw.trimEnd();
    if (!line) continue;
    if (line.startsWith("#")) {
      const body = line.slice(1).trim();
      const eq = body.indexOf("=");
      if (eq >= 0) meta[body.slice(0, eq).trim()] = body.slice(eq + 1);
      continue;
    }
    const cells = line.split("\t");
    if (columns === null) {
      columns = cells;
    } else {
      const row: Record<string, string> = {};
      columns.forEach((c, i) => (row[c] = cells[i] ?? ""));
      rows.push(row);
    }
  }
  if (columns === null) throw new Error(`${path}: empty table`);
  return { columns, rows, meta };
}

export interface PairedRow {
  metric: string;
  case_: string;
  sizeLabel: string;
  n: number;
  seed: number;
  bce: number | null;
  asa: number | null;
  paired: boolean;
}

/** Rows of a report.tsv produced by the pipeline's report command. */
export function readReport(path: string): PairedRow[] {
  const table = readTable(path);
  return table.rows.map((r) => ({
    metric: r.metric,
    case_: r.case,
    sizeLabel: r.size_label,
    n: Number(r.N),
    seed: Number(r.seed),
    bce: r.bce_value === "" ? null : Number(r.bce_value),
    asa: r.asa_value === "" ? null : Number(r.asa_value),
    paired: r.paired === "1",
  }));
}

export interface HistoryCurve {
  label: string;
  lossMode: string;
  cumTime: number[];
  valBce: number[];
}

export function readHistory(path: string): HistoryCurve {
  const table = readTable(path);
  const m = table.meta;
  const label = `${m.case ?? "?"} ${m.size_label ?? ""} N=${m.N ?? "?"} ${m.loss_mode ?? "?"} seed=${m.seed ?? "?"}`;
  return {
    label,
    lossMode: m.loss_mode ?? "?",
    cumTime: table.rows.map((r) => Number(r.cum_time)),
    valBce: table.rows.map((r) => Number(r.val_bce)),
  };
}

export interface CdfSeries {
  evaluator: string;
  values: number[]; // sorted ascending
}

export function readNullCdf(path: string): CdfSeries[] {
  const table = readTable(path);
  const byEvaluator = new Map<string, number[]>();
  for (const row of table.rows) {
    const list = byEvaluator.get(row.evaluator) ?? [];
    list.push(Number(row.value));
    byEvaluator.set(row.evaluator, list);
  }
  return [...byEvaluator.entries()].map(([evaluator, values]) => ({
    evaluator,
    values: values.slice().sort((a, b) => a - b),
  }));
}

export interface SurfaceData {
  u: number[];
  v: number[];
  /** per-evaluator grid values, keyed "gt" / "nler" */
  gls: Map<string, number[]>;
  truth: [number, number];
  mles: Map<string, [number, number]>;
  fixed: string;
}

export function readSurface(path: string): SurfaceData {
  const table = readTable(path);
  const gls = new Map<string, number[]>();
  for (const col of table.columns) {
    if (col.startsWith("gls_")) gls.set(col.slice(4), table.rows.map((r) => Number(r[col])));
  }
  const mles = new Map<string, [number, number]>();
  for (const [key, value] of Object.entries(table.meta)) {
    if (key.startsWith("mle_")) {
      const [a, b] = value.split(",").map(Number);
      mles.set(key.slice(4), [a, b]);
    }
  }
  const [tu, tv] = (table.meta.truth ?? "0,0").split(",").map(Number);
  return {
    u: table.rows.map((r) => Number(r.u)),
    v: table.rows.map((r) => Number(r.v)),
    gls,
    truth: [tu, tv],
    mles,
    fixed: table.meta.fixed ?? "",
  };
}
