/** Minimal SVG assembly: linear scales, axes, and shape helpers. */

export interface Scale {
  (x: number): number;
  domain: [number, number];
  range: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const fn = ((x: number) => r0 + ((x - d0) / span) * (r1 - r0)) as Scale;
  fn.domain = domain;
  fn.range = range;
  return fn;
}

export function extent(values: number[], pad = 0.05): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!isFinite(lo)) return [0, 1];
  const span = hi - lo || Math.abs(hi) || 1;
  return [lo - pad * span, hi + pad * span];
}

export function fmt(x: number): string {
  return Number.isInteger(x) ? String(x) : x.toPrecision(4);
}

export class Svg {
  private parts: string[] = [];
  constructor(readonly width: number, readonly height: number) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
      `<rect width="${width}" height="${height}" fill="white"/>`,
    );
  }

  raw(s: string): void {
    this.parts.push(s);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, cls = ""): void {
    this.parts.push(
      `<line ${cls ? `class="${cls}" ` : ""}x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  path(d: string, stroke: string, fill = "none", width = 1, cls = "", dash = ""): void {
    const extra = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<path ${cls ? `class="${cls}" ` : ""}d="${d}" stroke="${stroke}" fill="${fill}" stroke-width="${width}"${extra}/>`,
    );
  }

  circle(cx: number, cy: number, r: number, fill: string, cls = ""): void {
    this.parts.push(
      `<circle ${cls ? `class="${cls}" ` : ""}cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`,
    );
  }

  text(x: number, y: number, content: string, size = 11, anchor = "start", fill = "#333"): void {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" text-anchor="${anchor}" fill="${fill}">${escapeXml(content)}</text>`,
    );
  }

  /** Arrow from tail to head with a small triangular head marker. */
  arrow(x1: number, y1: number, x2: number, y2: number, stroke: string): void {
    this.line(x1, y1, x2, y2, stroke, 1.5, "arrow");
    const angle = Math.atan2(y2 - y1, x2 - x1);
    const size = 5;
    const a1 = angle + Math.PI * 0.85;
    const a2 = angle - Math.PI * 0.85;
    const d = `M ${fmt(x2)} ${fmt(y2)} L ${fmt(x2 + size * Math.cos(a1))} ${fmt(
      y2 + size * Math.sin(a1),
    )} L ${fmt(x2 + size * Math.cos(a2))} ${fmt(y2 + size * Math.sin(a2))} Z`;
    this.path(d, stroke, stroke, 1, "arrowhead");
  }

  /** x marker (used for the true parameter value). */
  cross(cx: number, cy: number, size: number, stroke: string, cls = "marker-cross"): void {
    this.line(cx - size, cy - size, cx + size, cy + size, stroke, 2, cls);
    this.line(cx - size, cy + size, cx + size, cy - size, stroke, 2, cls);
  }

  star(cx: number, cy: number, size: number, fill: string, cls = "marker-star"): void {
    const pts: string[] = [];
    for (let i = 0; i < 10; i++) {
      const r = i % 2 === 0 ? size : size * 0.45;
      const a = -Math.PI / 2 + (i * Math.PI) / 5;
      pts.push(`${fmt(cx + r * Math.cos(a))},${fmt(cy + r * Math.sin(a))}`);
    }
    this.parts.push(`<polygon class="${cls}" points="${pts.join(" ")}" fill="${fill}"/>`);
  }

  xAxis(scale: Scale, y: number, label: string, ticks = 5): void {
    const [r0, r1] = scale.range;
    this.line(r0, y, r1, y, "#333");
    const [d0, d1] = scale.domain;
    for (let i = 0; i <= ticks; i++) {
      const v = d0 + ((d1 - d0) * i) / ticks;
      const x = scale(v);
      this.line(x, y, x, y + 4, "#333");
      this.text(x, y + 16, fmt(v), 9, "middle");
    }
    this.text((r0 + r1) / 2, y + 30, label, 11, "middle");
  }

  yAxis(scale: Scale, x: number, label: string, ticks = 5): void {
    const [r0, r1] = scale.range;
    this.line(x, r0, x, r1, "#333");
    const [d0, d1] = scale.domain;
    for (let i = 0; i <= ticks; i++) {
      const v = d0 + ((d1 - d0) * i) / ticks;
      const y = scale(v);
      this.line(x - 4, y, x, y, "#333");
      this.text(x - 6, y + 3, fmt(v), 9, "end");
    }
    this.text(12, (r0 + r1) / 2, label, 11, "middle");
  }

  render(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

/** Categorical palette keyed by sorted unique values. */
export function colorFor(keys: (string | number)[]): Map<string | number, string> {
  const palette = ["#1f77b4", "#2ca02c", "#d62728", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"];
  const uniq = [...new Set(keys)].sort((a, b) => (a < b ? -1 : a > b ? 1 : 0));
  return new Map(uniq.map((k, i) => [k, palette[i % palette.length]]));
}
