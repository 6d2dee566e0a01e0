/**
 * Deterministic SVG scene builders for loss curves and 2-D latent scatters.
 * Pure string generation: same inputs and flags, same bytes.
 */

import { CurveRow, LatentTable } from "./csv";

/** Okabe-Ito-ish 10-color palette; index = label for latent scatters. */
export const PALETTE = [
  "#4477aa",
  "#ee6677",
  "#228833",
  "#ccbb44",
  "#66ccee",
  "#aa3377",
  "#bbbbbb",
  "#e69f00",
  "#009e73",
  "#cc79a7",
];

const WIDTH = 840;
const HEIGHT = 520;
const MARGIN = { top: 28, right: 170, bottom: 48, left: 72 };

interface Scale {
  (v: number): number;
  domain: [number, number];
}

function linearScale(domain: [number, number], range: [number, number]): Scale {
  let [d0, d1] = domain;
  if (d0 === d1) {
    d0 -= 0.5;
    d1 += 0.5;
  }
  const f = ((v: number) => range[0] + ((v - d0) / (d1 - d0)) * (range[1] - range[0])) as Scale;
  f.domain = [d0, d1];
  return f;
}

function niceTicks(lo: number, hi: number, count = 6): number[] {
  if (lo === hi) return [lo];
  const span = hi - lo;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (count * step) / span;
  const mult = err <= 0.15 ? 10 : err <= 0.35 ? 5 : err <= 0.75 ? 2 : 1;
  const s = step * mult;
  const start = Math.ceil(lo / s) * s;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12 * span; v += s) {
    ticks.push(Math.abs(v) < s * 1e-9 ? 0 : v);
  }
  return ticks;
}

function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e5 || a < 1e-3) return v.toExponential(1);
  return Number(v.toPrecision(5)).toString();
}

function axes(x: Scale, y: Scale, xLabel: string, yLabel: string): string {
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  const parts: string[] = [];
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="#333" stroke-width="1"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="#333" stroke-width="1"/>`);
  for (const t of niceTicks(x.domain[0], x.domain[1])) {
    const px = x(t);
    parts.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="#333"/>`);
    parts.push(
      `<text x="${px}" y="${y0 + 20}" text-anchor="middle" font-size="12" fill="#333">${fmt(t)}</text>`,
    );
  }
  for (const t of niceTicks(y.domain[0], y.domain[1])) {
    const py = y(t);
    parts.push(`<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="#333"/>`);
    parts.push(
      `<text x="${x0 - 9}" y="${py + 4}" text-anchor="end" font-size="12" fill="#333">${fmt(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 10}" text-anchor="middle" font-size="13" fill="#111">${xLabel}</text>`,
  );
  parts.push(
    `<text x="18" y="${(y0 + y1) / 2}" text-anchor="middle" font-size="13" fill="#111" transform="rotate(-90 18 ${(y0 + y1) / 2})">${yLabel}</text>`,
  );
  return parts.join("\n");
}

function svgDoc(body: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">\n` +
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n` +
    body +
    "\n</svg>\n"
  );
}

export type CurveXAxis = "epoch" | "seconds";

export interface NamedCurve {
  name: string;
  rows: CurveRow[];
}

/** One polyline per file; legend from file names; x is epoch or cumulative seconds. */
export function buildCurvesSvg(curves: NamedCurve[], xAxis: CurveXAxis): string {
  const series = curves.map(({ name, rows }) => {
    let acc = 0;
    const xs = rows.map((r) => {
      if (xAxis === "epoch") return r.epoch;
      acc += r.seconds;
      return acc;
    });
    return { name, xs, ys: rows.map((r) => r.objective) };
  });
  const allX = series.flatMap((s) => s.xs);
  const allY = series.flatMap((s) => s.ys);
  const x = linearScale([Math.min(...allX), Math.max(...allX)], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([Math.min(...allY), Math.max(...allY)], [HEIGHT - MARGIN.bottom, MARGIN.top]);

  const parts: string[] = [axes(x, y, xAxis === "epoch" ? "epoch" : "seconds", "objective")];
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    const pts = s.xs.map((xv, k) => `${x(xv).toFixed(2)},${y(s.ys[k]!).toFixed(2)}`).join(" ");
    parts.push(`<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.8"/>`);
    const ly = MARGIN.top + 16 * i;
    const lx = WIDTH - MARGIN.right + 12;
    parts.push(`<line x1="${lx}" y1="${ly}" x2="${lx + 22}" y2="${ly}" stroke="${color}" stroke-width="2.5" class="legend"/>`);
    parts.push(`<text x="${lx + 28}" y="${ly + 4}" font-size="12" fill="#111">${escapeXml(s.name)}</text>`);
  });
  return svgDoc(parts.join("\n"));
}

/** 2-D scatter; color by label when present, single color otherwise. */
export function buildLatentsSvg(table: LatentTable): string {
  if (table.latentDim !== 2) {
    throw new Error(`latent scatter needs exactly 2 dimensions, file has ${table.latentDim}`);
  }
  const xs = table.points.map((p) => p[0]!);
  const ys = table.points.map((p) => p[1]!);
  const x = linearScale([Math.min(...xs), Math.max(...xs)], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([Math.min(...ys), Math.max(...ys)], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const parts: string[] = [axes(x, y, "z_1", "z_2")];
  table.points.forEach((p, i) => {
    const color = table.labels ? PALETTE[((table.labels[i]! % 10) + 10) % 10] : PALETTE[0];
    parts.push(
      `<circle cx="${x(p[0]!).toFixed(2)}" cy="${y(p[1]!).toFixed(2)}" r="2.4" fill="${color}" fill-opacity="0.75"/>`,
    );
  });
  if (table.labels) {
    const present = [...new Set(table.labels.map((l) => ((l % 10) + 10) % 10))].sort((a, b) => a - b);
    present.forEach((label, i) => {
      const ly = MARGIN.top + 16 * i;
      const lx = WIDTH - MARGIN.right + 12;
      parts.push(`<circle cx="${lx + 6}" cy="${ly}" r="4" fill="${PALETTE[label]}" class="legend"/>`);
      parts.push(`<text x="${lx + 18}" y="${ly + 4}" font-size="12" fill="#111">${label}</text>`);
    });
  }
  return svgDoc(parts.join("\n"));
}

function escapeXml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}
