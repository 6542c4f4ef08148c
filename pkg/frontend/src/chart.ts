import type { MetricsEntryDTO } from "./types.js";

// Error rate against labeled fraction, one point per completed training
// round. Rounds whose test references hold no events carry er = null and
// are skipped. Rendered as plain SVG so the points stay inspectable DOM.

const NS = "http://www.w3.org/2000/svg";

export interface ChartPoint {
  budget: number; // labeled fraction, 0..1
  er: number;
  round: number;
}

export function chartPoints(entries: MetricsEntryDTO[]): ChartPoint[] {
  return entries
    .filter((e) => e.ER !== null && e.ER !== undefined)
    .map((e) => ({ budget: e.labeled_fraction, er: e.ER as number, round: e.round }));
}

const W = 420;
const H = 180;
const PAD = { left: 44, right: 12, top: 10, bottom: 28 };

function svgEl<K extends keyof SVGElementTagNameMap>(
  name: K,
  attrs: Record<string, string>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(NS, name);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  return el;
}

export function buildErChart(entries: MetricsEntryDTO[]): SVGSVGElement {
  const points = chartPoints(entries);
  const svg = svgEl("svg", {
    viewBox: `0 0 ${W} ${H}`,
    role: "img",
    "aria-label": "error rate against labeling budget",
  });
  svg.dataset.pointCount = String(points.length);

  const plotW = W - PAD.left - PAD.right;
  const plotH = H - PAD.top - PAD.bottom;
  const yMax = Math.max(1.0, ...points.map((p) => p.er)) * 1.05;
  const toX = (budget: number) => PAD.left + budget * plotW;
  const toY = (er: number) => PAD.top + plotH * (1 - er / yMax);

  svg.appendChild(svgEl("rect", {
    x: String(PAD.left), y: String(PAD.top),
    width: String(plotW), height: String(plotH),
    class: "chart-bg",
  }));

  for (const frac of [0, 0.25, 0.5, 0.75, 1.0]) {
    const x = toX(frac);
    svg.appendChild(svgEl("line", {
      x1: String(x), y1: String(PAD.top), x2: String(x),
      y2: String(PAD.top + plotH), class: "chart-grid",
    }));
    const label = svgEl("text", {
      x: String(x), y: String(H - 10), class: "chart-tick",
      "text-anchor": "middle",
    });
    label.textContent = `${Math.round(frac * 100)}%`;
    svg.appendChild(label);
  }
  const erTicks = [0, 0.5, 1.0].filter((v) => v <= yMax);
  for (const er of erTicks) {
    const y = toY(er);
    svg.appendChild(svgEl("line", {
      x1: String(PAD.left), y1: String(y),
      x2: String(PAD.left + plotW), y2: String(y), class: "chart-grid",
    }));
    const label = svgEl("text", {
      x: String(PAD.left - 6), y: String(y + 3), class: "chart-tick",
      "text-anchor": "end",
    });
    label.textContent = er.toFixed(1);
    svg.appendChild(label);
  }

  if (points.length > 0) {
    const coords = points.map((p) => `${toX(p.budget).toFixed(1)},${toY(p.er).toFixed(1)}`);
    svg.appendChild(svgEl("polyline", {
      points: coords.join(" "),
      class: "chart-line",
      fill: "none",
    }));
    for (const p of points) {
      const dot = svgEl("circle", {
        cx: toX(p.budget).toFixed(1),
        cy: toY(p.er).toFixed(1),
        r: "3.5",
        class: "chart-dot",
      });
      dot.dataset.budget = String(p.budget);
      dot.dataset.er = String(p.er);
      dot.dataset.round = String(p.round);
      svg.appendChild(dot);
    }
  }
  return svg;
}
