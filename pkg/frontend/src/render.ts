// Canvas drawing: 2.5D orthographic skeleton (palm plane + flexion plane)
// and simple time-series plots. No state lives here.

import { DigitSkeleton } from "./fk.js";
import { PlotSeries } from "./ringbuffer.js";

export interface Projection {
  label: string;
  // meters -> canvas axes; x right, y up in world units
  pick(p: [number, number, number]): [number, number];
}

export const TOP_VIEW: Projection = {
  label: "palm plane (x-z)",
  pick: (p) => [p[0], p[2]],
};

export const SIDE_VIEW: Projection = {
  label: "flexion plane (z-y)",
  pick: (p) => [p[2], p[1]],
};

const DIGIT_COLORS: Record<string, string> = {
  thumb: "#e6a23c",
  index: "#64b5f6",
  middle: "#81c784",
  ring: "#ba68c8",
  pinky: "#e57373",
};

export function drawSkeleton(
  ctx: CanvasRenderingContext2D,
  skeletons: DigitSkeleton[],
  projection: Projection,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);

  const pts = skeletons.flatMap((s) => s.points.map(projection.pick));
  pts.push([0, 0]);
  const xs = pts.map((p) => p[0]);
  const ys = pts.map((p) => p[1]);
  const minX = Math.min(...xs) - 0.02;
  const maxX = Math.max(...xs) + 0.02;
  const minY = Math.min(...ys) - 0.02;
  const maxY = Math.max(...ys) + 0.02;
  const scale = Math.min(width / (maxX - minX), height / (maxY - minY));
  const toCanvas = (p: [number, number]): [number, number] => [
    (p[0] - minX) * scale,
    height - (p[1] - minY) * scale,
  ];

  ctx.font = "11px sans-serif";
  ctx.fillStyle = "#888";
  ctx.fillText(projection.label, 8, 14);

  // wrist marker
  const wrist = toCanvas([0, 0]);
  ctx.strokeStyle = "#666";
  ctx.strokeRect(wrist[0] - 4, wrist[1] - 4, 8, 8);

  for (const skeleton of skeletons) {
    const color = DIGIT_COLORS[skeleton.digit] ?? "#ccc";
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    const base = toCanvas(projection.pick(skeleton.points[0]));
    ctx.moveTo(wrist[0], wrist[1]);
    ctx.lineTo(base[0], base[1]);
    for (const point of skeleton.points) {
      const c = toCanvas(projection.pick(point));
      ctx.lineTo(c[0], c[1]);
    }
    ctx.stroke();
    for (const point of skeleton.points) {
      const c = toCanvas(projection.pick(point));
      ctx.beginPath();
      ctx.arc(c[0], c[1], 2.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

export function drawSeries(
  ctx: CanvasRenderingContext2D,
  series: PlotSeries,
  label: string,
  color = "#64b5f6",
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.font = "11px sans-serif";
  ctx.fillStyle = "#888";

  const data = series.data();
  if (data.length < 2) {
    ctx.fillText(`${label} (waiting for data)`, 8, 14);
    return;
  }
  const t1 = data[data.length - 1].t;
  const t0 = t1 - series.windowS;
  let maxV = 0;
  for (const p of data) maxV = Math.max(maxV, p.value);
  maxV = maxV || 1;

  ctx.fillText(`${label}  max ${maxV.toPrecision(3)}`, 8, 14);
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  let started = false;
  for (const p of data) {
    const x = ((p.t - t0) / series.windowS) * width;
    const y = height - (p.value / (maxV * 1.1)) * (height - 20);
    if (!started) {
      ctx.moveTo(x, y);
      started = true;
    } else {
      ctx.lineTo(x, y);
    }
  }
  ctx.stroke();
}
