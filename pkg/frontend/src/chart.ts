/** Dependency-free SVG line charts with an anomalous-span highlight band. */

import type { KpiSeries } from "./types.js";

export interface ChartGeometry {
  width: number;
  height: number;
  padLeft: number;
  padRight: number;
  padTop: number;
  padBottom: number;
}

export const DEFAULT_GEOMETRY: ChartGeometry = {
  width: 560,
  height: 120,
  padLeft: 58,
  padRight: 10,
  padTop: 8,
  padBottom: 18,
};

export interface ChartModel {
  /** Polyline segments in pixel space; nulls split the line into segments. */
  segments: { x: number; y: number }[][];
  highlight: { x0: number; x1: number } | null;
  refY: number | null;
  yMin: number;
  yMax: number;
}

function scale(value: number, lo: number, hi: number, outLo: number, outHi: number): number {
  if (hi === lo) return (outLo + outHi) / 2;
  return outLo + ((value - lo) / (hi - lo)) * (outHi - outLo);
}

/**
 * Lay one KPI series out in pixel space. The highlight band covers
 * [spanStart, spanEnd] plus half an interval on each side, so a duration-1
 * event still shows as a visible column around its single point.
 */
export function layoutChart(
  series: KpiSeries,
  spanStart: string,
  spanEnd: string,
  intervalSeconds: number,
  geometry: ChartGeometry = DEFAULT_GEOMETRY,
): ChartModel {
  const times = series.points.map((p) => Date.parse(p.t));
  const values = series.points.map((p) => p.value);
  const present = values.filter((v): v is number => v !== null);
  if (series.ref !== null) present.push(series.ref);
  const yMin = present.length ? Math.min(...present) : 0;
  const yMax = present.length ? Math.max(...present) : 1;
  const tMin = times.length ? Math.min(...times) : 0;
  const tMax = times.length ? Math.max(...times) : 1;

  const { width, height, padLeft, padRight, padTop, padBottom } = geometry;
  const xLo = padLeft;
  const xHi = width - padRight;
  const yLo = height - padBottom;
  const yHi = padTop;

  const segments: { x: number; y: number }[][] = [];
  let current: { x: number; y: number }[] = [];
  series.points.forEach((point, i) => {
    const value = point.value;
    if (value === null) {
      if (current.length) segments.push(current);
      current = [];
      return;
    }
    current.push({
      x: scale(times[i]!, tMin, tMax, xLo, xHi),
      y: scale(value, yMin, yMax, yLo, yHi),
    });
  });
  if (current.length) segments.push(current);

  let highlight: { x0: number; x1: number } | null = null;
  const s = Date.parse(spanStart) - (intervalSeconds * 1000) / 2;
  const e = Date.parse(spanEnd) + (intervalSeconds * 1000) / 2;
  if (times.length && e >= tMin && s <= tMax) {
    highlight = {
      x0: scale(Math.max(s, tMin), tMin, tMax, xLo, xHi),
      x1: scale(Math.min(e, tMax), tMin, tMax, xLo, xHi),
    };
  }

  return {
    segments,
    highlight,
    refY: series.ref === null ? null : scale(series.ref, yMin, yMax, yLo, yHi),
    yMin,
    yMax,
  };
}

const fmt = (n: number): string => (Math.round(n * 100) / 100).toString();

/** Render one KPI chart as an SVG string. */
export function renderChartSvg(
  series: KpiSeries,
  spanStart: string,
  spanEnd: string,
  intervalSeconds: number,
  geometry: ChartGeometry = DEFAULT_GEOMETRY,
): string {
  const model = layoutChart(series, spanStart, spanEnd, intervalSeconds, geometry);
  const { width, height, padLeft, padTop, padBottom } = geometry;
  const parts: string[] = [];
  parts.push(
    `<svg class="kpi-chart" viewBox="0 0 ${width} ${height}" role="img" aria-label="${series.kpi}">`,
  );
  if (model.highlight) {
    const { x0, x1 } = model.highlight;
    parts.push(
      `<rect class="anomaly-span" x="${fmt(x0)}" y="${padTop}" width="${fmt(Math.max(x1 - x0, 2))}" height="${height - padTop - padBottom}"></rect>`,
    );
  }
  if (model.refY !== null) {
    parts.push(
      `<line class="ref-line" x1="${padLeft}" y1="${fmt(model.refY)}" x2="${width - 10}" y2="${fmt(model.refY)}"></line>`,
    );
  }
  for (const segment of model.segments) {
    if (segment.length === 1) {
      const only = segment[0]!;
      parts.push(`<circle class="kpi-point" cx="${fmt(only.x)}" cy="${fmt(only.y)}" r="2.5"></circle>`);
    } else {
      const points = segment.map((p) => `${fmt(p.x)},${fmt(p.y)}`).join(" ");
      parts.push(`<polyline class="kpi-line" fill="none" points="${points}"></polyline>`);
    }
  }
  parts.push(
    `<text class="axis-label" x="4" y="${padTop + 10}">${fmt(model.yMax)}</text>`,
    `<text class="axis-label" x="4" y="${height - padBottom}">${fmt(model.yMin)}</text>`,
    `<text class="kpi-name" x="${padLeft}" y="${height - 4}">${series.kpi}</text>`,
  );
  parts.push("</svg>");
  return parts.join("");
}
