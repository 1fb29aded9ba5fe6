import { describe, expect, it } from "vitest";

import { DEFAULT_GEOMETRY, layoutChart, renderChartSvg } from "../src/chart.js";
import type { KpiSeries } from "../src/types.js";

const INTERVAL = 900; // 15 minutes

function seriesOver(minutes: number[], values: (number | null)[], ref: number | null = 10): KpiSeries {
  return {
    kpi: "ho_fail",
    ref,
    points: minutes.map((m, i) => ({
      t: new Date(Date.UTC(2025, 0, 1, 0, m)).toISOString(),
      value: values[i] ?? null,
    })),
  };
}

describe("layoutChart", () => {
  it("covers the anomalous span plus half an interval each side", () => {
    const minutes = [0, 15, 30, 45, 60, 75, 90];
    const series = seriesOver(minutes, [10, 10, 50, 50, 10, 10, 10]);
    const spanStart = new Date(Date.UTC(2025, 0, 1, 0, 30)).toISOString();
    const spanEnd = new Date(Date.UTC(2025, 0, 1, 0, 45)).toISOString();
    const model = layoutChart(series, spanStart, spanEnd, INTERVAL);
    expect(model.highlight).not.toBeNull();
    const { x0, x1 } = model.highlight!;
    const { padLeft, width, padRight } = DEFAULT_GEOMETRY;
    const plotWidth = width - padLeft - padRight;
    // Span center sits at minute 37.5 of a 0..90 axis.
    const center = padLeft + ((37.5 - 0) / 90) * plotWidth;
    expect((x0 + x1) / 2).toBeCloseTo(center, 5);
    // Width covers [22.5, 52.5] minutes.
    expect(x1 - x0).toBeCloseTo((30 / 90) * plotWidth, 5);
  });

  it("clamps the highlight to the plotted window", () => {
    const minutes = [0, 15, 30];
    const series = seriesOver(minutes, [1, 2, 3]);
    const model = layoutChart(
      series,
      new Date(Date.UTC(2025, 0, 1, 0, 0)).toISOString(),
      new Date(Date.UTC(2025, 0, 1, 2, 0)).toISOString(),
      INTERVAL,
    );
    const { padLeft, width, padRight } = DEFAULT_GEOMETRY;
    expect(model.highlight!.x0).toBeGreaterThanOrEqual(padLeft);
    expect(model.highlight!.x1).toBeLessThanOrEqual(width - padRight);
  });

  it("omits the highlight when the span lies outside the window", () => {
    const series = seriesOver([0, 15], [1, 2]);
    const model = layoutChart(
      series,
      new Date(Date.UTC(2025, 0, 2)).toISOString(),
      new Date(Date.UTC(2025, 0, 2)).toISOString(),
      INTERVAL,
    );
    expect(model.highlight).toBeNull();
  });

  it("splits the polyline at missing values", () => {
    const series = seriesOver([0, 15, 30, 45], [1, null, 3, 4]);
    const model = layoutChart(series, "2025-01-01T00:00:00Z", "2025-01-01T00:00:00Z", INTERVAL);
    expect(model.segments).toHaveLength(2);
    expect(model.segments[0]).toHaveLength(1);
    expect(model.segments[1]).toHaveLength(2);
  });

  it("positions the reference line inside the value range", () => {
    const series = seriesOver([0, 15, 30], [0, 20, 10], 10);
    const model = layoutChart(series, "2025-01-01T00:00:00Z", "2025-01-01T00:00:00Z", INTERVAL);
    const { height, padBottom, padTop } = DEFAULT_GEOMETRY;
    expect(model.refY!).toBeCloseTo((height - padBottom + padTop) / 2, 5);
  });
});

describe("renderChartSvg", () => {
  it("draws a highlight band, reference line, and data line", () => {
    const minutes = [0, 15, 30, 45, 60];
    const series = seriesOver(minutes, [10, 10, 50, 10, 10]);
    const svg = renderChartSvg(
      series,
      new Date(Date.UTC(2025, 0, 1, 0, 30)).toISOString(),
      new Date(Date.UTC(2025, 0, 1, 0, 30)).toISOString(),
      INTERVAL,
    );
    expect(svg).toContain('class="anomaly-span"');
    expect(svg).toContain('class="ref-line"');
    expect(svg).toContain('class="kpi-line"');
    expect(svg).toContain("ho_fail");
  });

  it("keeps a visible band for a duration-1 event", () => {
    const minutes = [0, 15, 30];
    const svg = renderChartSvg(
      seriesOver(minutes, [1, 9, 1]),
      new Date(Date.UTC(2025, 0, 1, 0, 15)).toISOString(),
      new Date(Date.UTC(2025, 0, 1, 0, 15)).toISOString(),
      INTERVAL,
    );
    const width = Number(/anomaly-span" x="[\d.]+" y="\d+" width="([\d.]+)"/.exec(svg)?.[1]);
    expect(width).toBeGreaterThan(2);
  });

  it("renders an isolated point as a circle marker", () => {
    const series = seriesOver([0, 15, 30], [null, 7, null]);
    const svg = renderChartSvg(series, "2025-01-01T00:15:00Z", "2025-01-01T00:15:00Z", INTERVAL);
    expect(svg).toContain('class="kpi-point"');
  });
});
