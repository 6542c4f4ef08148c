// Inferno-style colormap: black -> purple -> red -> orange -> light yellow.
// Stored as a flat 256x3 lookup table; index with a value already
// normalized to [0, 1].

const STOPS: [number, number, number][] = [
  [0, 0, 4],
  [40, 11, 84],
  [101, 21, 110],
  [188, 55, 84],
  [237, 105, 37],
  [249, 168, 9],
  [252, 230, 100],
  [252, 255, 164],
];

export function buildInfernoLUT(): Uint8Array {
  const lut = new Uint8Array(256 * 3);
  const n = STOPS.length - 1;
  for (let i = 0; i < 256; i++) {
    const seg = (i / 255) * n;
    const lo = Math.min(Math.floor(seg), n - 1);
    const hi = lo + 1;
    const frac = seg - lo;
    const a = STOPS[lo]!;
    const b = STOPS[hi]!;
    lut[i * 3] = Math.round(a[0] + (b[0] - a[0]) * frac);
    lut[i * 3 + 1] = Math.round(a[1] + (b[1] - a[1]) * frac);
    lut[i * 3 + 2] = Math.round(a[2] + (b[2] - a[2]) * frac);
  }
  return lut;
}

const SHARED_LUT = buildInfernoLUT();

/** RGB triple for a normalized value in [0, 1]. */
export function infernoColor(t: number): [number, number, number] {
  const clamped = Math.max(0, Math.min(1, t));
  const i = Math.round(clamped * 255) * 3;
  return [SHARED_LUT[i]!, SHARED_LUT[i + 1]!, SHARED_LUT[i + 2]!];
}
