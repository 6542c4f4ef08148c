import { buildInfernoLUT } from "./colormap.js";
import type { MelDTO } from "./types.js";

/**
 * Mel heatmap rendering.
 *
 * The server sends log-mel values row-major (T frames by B bins), so no
 * further log scaling happens here; the values are normalized against
 * robust percentiles of the segment itself and mapped through the
 * colormap. The canvas raster is exactly T x B pixels, one pixel per
 * time-frequency cell, stretched to display size with CSS; the grid
 * overlay is separate DOM so it never overwrites data cells.
 */

const LUT = buildInfernoLUT();
const LOW_PCT = 0.02;
const HIGH_PCT = 0.98;

function percentile(sorted: number[], q: number): number {
  if (sorted.length === 0) return 0;
  const pos = q * (sorted.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.min(lo + 1, sorted.length - 1);
  return sorted[lo]! + (sorted[hi]! - sorted[lo]!) * (pos - lo);
}

export interface MelImage {
  width: number; // T
  height: number; // B
  rgba: Uint8ClampedArray; // width*height*4, row 0 = highest bin
}

/** Pure pixel computation: one pixel per cell, bin 0 at the bottom. */
export function melToImage(mel: MelDTO): MelImage {
  const { T, B, values } = mel;
  if (values.length !== T * B) {
    throw new Error(`mel payload: ${values.length} values for ${T}x${B}`);
  }
  const sorted = [...values].sort((a, b) => a - b);
  const floor = percentile(sorted, LOW_PCT);
  const ceil = percentile(sorted, HIGH_PCT);
  const range = ceil - floor || 1;

  const rgba = new Uint8ClampedArray(T * B * 4);
  for (let t = 0; t < T; t++) {
    for (let bin = 0; bin < B; bin++) {
      const v = values[t * B + bin]!;
      const norm = Math.max(0, Math.min(1, (v - floor) / range));
      const lutIdx = Math.round(norm * 255) * 3;
      const y = B - 1 - bin;
      const px = (y * T + t) * 4;
      rgba[px] = LUT[lutIdx]!;
      rgba[px + 1] = LUT[lutIdx + 1]!;
      rgba[px + 2] = LUT[lutIdx + 2]!;
      rgba[px + 3] = 255;
    }
  }
  return { width: T, height: B, rgba };
}

/**
 * Paint the heatmap onto a canvas. Sets the canvas raster to T x B and
 * fills it; environments without 2d context support still get the
 * raster dimensions (the pixels stay blank there).
 */
export function drawMel(canvas: HTMLCanvasElement, mel: MelDTO): void {
  const img = melToImage(mel);
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const data = ctx.createImageData(img.width, img.height);
  data.data.set(img.rgba);
  ctx.putImageData(data, 0, 0);
}

/** Horizontal positions of whole-second grid lines, as fractions of the width. */
export function gridLineFractions(T: number, hopS: number): number[] {
  const duration = T * hopS;
  const out: number[] = [];
  for (let s = 1; s < duration - 1e-9; s++) {
    out.push(s / duration);
  }
  return out;
}
