/**
 * The four figure styles: arrow comparisons (one lane per network size,
 * one arrow per dataset size from the plain-BCE value to the augmented-loss
 * value), validation-loss-vs-training-time curves, empirical null CDF
 * overlays, and log-score surface contours with truth/MLE markers.
 */

import { contours } from "d3-contour";

import { CdfSeries, HistoryCurve, PairedRow, SurfaceData } from "./tables.js";
import { Svg, colorFor, extent, linearScale } from "./svg.js";

export class EmptySelection extends Error {}

const W = 640;
const H = 420;
const MARGIN = { left: 64, right: 160, top: 36, bottom: 56 };

export function plotArrows(rows: PairedRow[], metric: string): string {
  const selected = rows.filter((r) => r.metric === metric);
  if (selected.length === 0) throw new EmptySelection(`no rows for metric ${metric}`);
  const paired = selected.filter((r) => r.paired && r.bce !== null && r.asa !== null);
  for (const r of selected) {
    if (!paired.includes(r)) {
      console.log(`note: unpaired row skipped (${r.metric} ${r.sizeLabel} N=${r.n} seed=${r.seed})`);
    }
  }
  if (paired.length === 0) throw new EmptySelection(`no paired rows for metric ${metric}`);

  const lanes = [...new Set(paired.map((r) => r.sizeLabel))].sort();
  const ns = paired.map((r) => r.n);
  const colors = colorFor(ns);
  const values = paired.flatMap((r) => [r.bce as number, r.asa as number]);
  const y = linearScale(extent(values), [H - MARGIN.bottom, MARGIN.top]);
  const laneX = (lane: string, n: number) => {
    const li = lanes.indexOf(lane);
    const slot = [...colors.keys()].indexOf(n);
    const laneWidth = (W - MARGIN.left - MARGIN.right) / lanes.length;
    return MARGIN.left + laneWidth * (li + 0.5) + (slot - (colors.size - 1) / 2) * 14;
  };

  const svg = new Svg(W, H);
  svg.text(W / 2, 20, `${metric}: plain BCE (tail) vs score-augmented (head)`, 13, "middle");
  for (const [i, lane] of lanes.entries()) {
    const laneWidth = (W - MARGIN.left - MARGIN.right) / lanes.length;
    const cx = MARGIN.left + laneWidth * (i + 0.5);
    svg.text(cx, H - MARGIN.bottom + 18, `size ${lane}`, 11, "middle");
    if (i > 0) svg.line(MARGIN.left + laneWidth * i, MARGIN.top, MARGIN.left + laneWidth * i, H - MARGIN.bottom, "#ddd");
  }
  svg.yAxis(y, MARGIN.left, metric);
  for (const r of paired) {
    const x = laneX(r.sizeLabel, r.n);
    svg.arrow(x, y(r.bce as number), x, y(r.asa as number), colors.get(r.n) as string);
  }
  let ly = MARGIN.top;
  for (const [n, color] of colors) {
    svg.circle(W - MARGIN.right + 18, ly, 4, color);
    svg.text(W - MARGIN.right + 28, ly + 3, `N = ${n}`, 10);
    ly += 16;
  }
  return svg.render();
}

export function plotLossVsTime(curves: HistoryCurve[]): string {
  if (curves.length === 0) throw new EmptySelection("no history curves");
  const allT = curves.flatMap((c) => c.cumTime);
  const allV = curves.flatMap((c) => c.valBce);
  const x = linearScale(extent(allT, 0.02), [MARGIN.left, W - MARGIN.right]);
  const y = linearScale(extent(allV), [H - MARGIN.bottom, MARGIN.top]);
  const colors = colorFor(curves.map((c) => c.label));
  const svg = new Svg(W, H);
  svg.text(W / 2, 20, "validation BCE vs training time", 13, "middle");
  svg.xAxis(x, H - MARGIN.bottom, "training time (s)");
  svg.yAxis(y, MARGIN.left, "validation BCE");
  let ly = MARGIN.top;
  for (const curve of curves) {
    const color = colors.get(curve.label) as string;
    const d = curve.cumTime
      .map((t, i) => `${i === 0 ? "M" : "L"} ${x(t).toFixed(2)} ${y(curve.valBce[i]).toFixed(2)}`)
      .join(" ");
    svg.path(d, color, "none", 1.5, "curve", curve.lossMode === "bce" ? "4 3" : "");
    svg.line(W - MARGIN.right + 10, ly, W - MARGIN.right + 24, ly, color, 2);
    svg.text(W - MARGIN.right + 28, ly + 3, curve.label, 8);
    ly += 14;
  }
  return svg.render();
}

export function plotNullCdf(series: CdfSeries[]): string {
  if (series.length === 0 || series.every((s) => s.values.length === 0)) {
    throw new EmptySelection("no LRTS samples");
  }
  // shared x range across evaluators so the overlays are comparable
  const allValues = series.flatMap((s) => s.values);
  const x = linearScale([0, Math.max(...allValues) * 1.02 || 1], [MARGIN.left, W - MARGIN.right]);
  const y = linearScale([0, 1], [H - MARGIN.bottom, MARGIN.top]);
  const colors = colorFor(series.map((s) => s.evaluator));
  const svg = new Svg(W, H);
  svg.text(W / 2, 20, "empirical null CDF of the likelihood-ratio statistic", 13, "middle");
  svg.xAxis(x, H - MARGIN.bottom, "LRTS");
  svg.yAxis(y, MARGIN.left, "empirical CDF");
  let ly = MARGIN.top;
  for (const s of series) {
    const color = colors.get(s.evaluator) as string;
    const n = s.values.length;
    let d = `M ${x(0).toFixed(2)} ${y(0).toFixed(2)}`;
    s.values.forEach((v, i) => {
      d += ` L ${x(v).toFixed(2)} ${y(i / n).toFixed(2)} L ${x(v).toFixed(2)} ${y((i + 1) / n).toFixed(2)}`;
    });
    d += ` L ${x(x.domain[1]).toFixed(2)} ${y(1).toFixed(2)}`;
    svg.path(d, color, "none", 1.5, `cdf-${s.evaluator}`);
    svg.line(W - MARGIN.right + 10, ly, W - MARGIN.right + 24, ly, color, 2);
    svg.text(W - MARGIN.right + 28, ly + 3, s.evaluator, 10);
    ly += 16;
  }
  return svg.render();
}

/** Contour plot of one evaluator's group log score over the 2D slice. */
export function plotSurface(surface: SurfaceData, evaluator: string): string {
  const vals = surface.gls.get(evaluator);
  if (!vals) throw new EmptySelection(`no surface values for evaluator ${evaluator}`);
  const us = [...new Set(surface.u)].sort((a, b) => a - b);
  const vs = [...new Set(surface.v)].sort((a, b) => a - b);
  const nu = us.length;
  const nv = vs.length;
  // grid[j * nu + i] = value at (us[i], vs[j]) for d3-contour's row-major layout
  const grid = new Array(nu * nv).fill(NaN);
  for (let k = 0; k < vals.length; k++) {
    const i = us.indexOf(surface.u[k]);
    const j = vs.indexOf(surface.v[k]);
    grid[j * nu + i] = vals[k];
  }
  const lo = Math.min(...vals);
  const hi = Math.max(...vals);
  const levels = Array.from({ length: 9 }, (_, i) => lo + ((i + 1) * (hi - lo)) / 10);
  const polys = contours().size([nu, nv]).thresholds(levels)(grid);

  const x = linearScale([us[0], us[nu - 1]], [MARGIN.left, W - MARGIN.right]);
  const y = linearScale([vs[0], vs[nv - 1]], [H - MARGIN.bottom, MARGIN.top]);
  // d3-contour coordinates live in grid-index space, offset by half a cell
  const gx = (ci: number) => x(us[0] + ((ci - 0.5) * (us[nu - 1] - us[0])) / (nu - 1));
  const gy = (cj: number) => y(vs[0] + ((cj - 0.5) * (vs[nv - 1] - vs[0])) / (nv - 1));

  const svg = new Svg(W, H);
  const fixedNote = surface.fixed ? ` (${surface.fixed})` : "";
  svg.text(W / 2, 20, `group log score surface: ${evaluator}${fixedNote}`, 13, "middle");
  svg.xAxis(x, H - MARGIN.bottom, "working coordinate 1");
  svg.yAxis(y, MARGIN.left, "working coordinate 2");
  for (const [i, poly] of polys.entries()) {
    const shade = 235 - Math.round((i * 120) / polys.length);
    let d = "";
    for (const ring of poly.coordinates.flat(1)) {
      (ring as [number, number][]).forEach(([cx, cy], k) => {
        d += `${k === 0 ? "M" : "L"} ${gx(cx).toFixed(2)} ${gy(cy).toFixed(2)} `;
      });
      d += "Z ";
    }
    svg.path(d.trim(), "#5577aa", `rgb(${shade},${shade},245)`, 0.8, "contour");
  }
  // markers follow the reference figure: red cross = truth, purple dot =
  // network MLE, blue star = exact-likelihood MLE
  svg.cross(x(surface.truth[0]), y(surface.truth[1]), 6, "red", "marker-truth");
  const mleNler = surface.mles.get("nler");
  if (mleNler) svg.circle(x(mleNler[0]), y(mleNler[1]), 5, "purple", "marker-mle-nler");
  const mleGt = surface.mles.get("gt");
  if (mleGt) svg.star(x(mleGt[0]), y(mleGt[1]), 8, "blue", "marker-mle-gt");
  svg.text(W - MARGIN.right + 10, MARGIN.top, "x truth", 10, "start", "red");
  svg.text(W - MARGIN.right + 10, MARGIN.top + 16, "o network MLE", 10, "start", "purple");
  svg.text(W - MARGIN.right + 10, MARGIN.top + 32, "* exact MLE", 10, "start", "blue");
  return svg.render();
}
