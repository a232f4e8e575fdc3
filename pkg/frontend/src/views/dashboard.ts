/**
 * Monitoring panels: reliability diagram, coverage-quality curve, and the
 * cycle history table.
 *
 * These render the server payloads verbatim; no metric is recomputed here.
 * Every drawn element carries the raw value in data attributes so the page
 * (and the tests) can trace each pixel back to a payload field.
 */

import { CalibrationReport, CurvePayload, CycleReport } from "../api.js";
import { clear, h, svgEl } from "../dom.js";

const WIDTH = 420;
const HEIGHT = 220;
const PAD = 30;

/** Per-bin accuracy bars with mean-confidence ticks; the ECE summary on top. */
export function renderReliabilityDiagram(root: HTMLElement, report: CalibrationReport): void {
  clear(root);
  const n = report.bins.length;
  const barWidth = (WIDTH - 2 * PAD) / n;
  const bars: Element[] = [];
  report.bins.forEach((bin, i) => {
    const x = PAD + i * barWidth;
    const accHeight = (HEIGHT - 2 * PAD) * bin.accuracy;
    bars.push(
      svgEl("rect", {
        class: "bin-accuracy",
        x: x.toFixed(1),
        y: (HEIGHT - PAD - accHeight).toFixed(1),
        width: (barWidth * 0.9).toFixed(1),
        height: accHeight.toFixed(1),
        "data-lo": String(bin.lo),
        "data-hi": String(bin.hi),
        "data-count": String(bin.count),
        "data-accuracy": String(bin.accuracy),
      }),
    );
    const confY = HEIGHT - PAD - (HEIGHT - 2 * PAD) * bin.mean_confidence;
    bars.push(
      svgEl("line", {
        class: "bin-confidence",
        x1: x.toFixed(1),
        x2: (x + barWidth * 0.9).toFixed(1),
        y1: confY.toFixed(1),
        y2: confY.toFixed(1),
        "data-mean-confidence": String(bin.mean_confidence),
      }),
    );
  });
  // the identity diagonal: perfectly calibrated bars touch it
  bars.push(
    svgEl("line", {
      class: "diagonal",
      x1: String(PAD),
      y1: String(HEIGHT - PAD),
      x2: String(WIDTH - PAD),
      y2: String(PAD),
    }),
  );
  const svg = svgEl(
    "svg",
    { viewBox: `0 0 ${WIDTH} ${HEIGHT}`, class: "reliability-diagram" },
    bars,
  );
  root.append(
    h("p", { class: "calibration-summary", "data-t-star": String(report.T_star) }, [
      `T* = ${report.T_star.toFixed(3)}; ECE ${report.ece_before.toFixed(3)} -> `,
      `${report.ece_after.toFixed(3)}; MCE ${report.mce.toFixed(3)}`,
    ]),
    svg,
  );
}

/** Coverage on x, accepted QWK on y; one point per threshold. */
export function renderCoverageCurve(root: HTMLElement, payload: CurvePayload): void {
  clear(root);
  const children: Element[] = [];
  const scaleX = (coverage: number) => PAD + coverage * (WIDTH - 2 * PAD);
  const scaleY = (qwk: number) => {
    const clamped = Math.max(-1, Math.min(1, qwk));
    return HEIGHT - PAD - ((clamped + 1) / 2) * (HEIGHT - 2 * PAD);
  };
  const drawable = payload.points.filter((p) => p.accepted_qwk !== null);
  if (drawable.length > 1) {
    const path = drawable
      .map((p) => `${scaleX(p.coverage).toFixed(1)},${scaleY(p.accepted_qwk!).toFixed(1)}`)
      .join(" ");
    children.push(svgEl("polyline", { class: "curve-line", points: path, fill: "none" }));
  }
  for (const point of payload.points) {
    children.push(
      svgEl("circle", {
        class: point.accepted_qwk === null ? "curve-point undefined-qwk" : "curve-point",
        cx: scaleX(point.coverage).toFixed(1),
        cy: point.accepted_qwk === null ? String(HEIGHT - PAD) : scaleY(point.accepted_qwk).toFixed(1),
        r: "4",
        "data-tau": String(point.tau),
        "data-coverage": String(point.coverage),
        "data-accepted-qwk": point.accepted_qwk === null ? "" : String(point.accepted_qwk),
      }),
    );
  }
  root.append(
    h("p", { class: "curve-summary" }, [
      `Cycle ${payload.cycle}: ${payload.points.length} operating points`,
    ]),
    svgEl("svg", { viewBox: `0 0 ${WIDTH} ${HEIGHT}`, class: "coverage-curve" }, children),
  );
}

/** One row per finalized cycle, in the report's own column order. */
export function renderCycleTable(root: HTMLElement, reports: CycleReport[]): void {
  clear(root);
  const header = h("tr", {}, [
    h("th", {}, ["Cycle"]),
    h("th", {}, ["Coverage"]),
    h("th", {}, ["Baseline QWK"]),
    h("th", {}, ["Acc. QWK"]),
    h("th", {}, ["Delta"]),
    h("th", {}, ["Rej. QWK"]),
    h("th", {}, ["T*"]),
  ]);
  const body = reports.map((r) =>
    h("tr", { class: "cycle-row", "data-cycle": String(r.cycle) }, [
      h("td", {}, [String(r.cycle)]),
      h("td", {}, [r.coverage.toFixed(3)]),
      h("td", {}, [fmt(r.baseline_qwk)]),
      h("td", {}, [fmt(r.accepted_qwk)]),
      h("td", {}, [fmt(r.delta_qwk)]),
      h("td", {}, [fmt(r.rejected_qwk)]),
      h("td", {}, [r.temperature_after.toFixed(3)]),
    ]),
  );
  root.append(h("table", { class: "cycle-table" }, [header, ...body]));
}

function fmt(value: number | null): string {
  return value === null ? "--" : value.toFixed(3);
}
