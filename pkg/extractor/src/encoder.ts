/**
 * Deterministic joint image/text encoders.
 *
 * The image path is: bicubic resize to the model's input size, a
 * hand-rolled feature stack, then a fixed seeded projection to the
 * model's output dimensionality. The text path renders the label
 * procedurally and feeds the rendering through the same image path,
 * which is what keeps the two sides aligned.
 *
 * The feature stack is built from groups that are individually
 * L2-normalized and weighted, so color identity and shape structure
 * both carry signal:
 *   - global mean color and mean-centered per-cell color means,
 *   - per-cell luminance spread,
 *   - edge orientation histograms (one global and translation-robust,
 *     one on a coarse grid),
 *   - global color occupancy,
 *   - a foreground profile measured around the foreground centroid at
 *     radii scaled by its RMS spread (translation and scale robust).
 *
 * No network, no weights to download: every model in the registry is
 * fully specified by its id. Asking for anything else is an error so
 * that callers notice missing runtimes instead of silently embedding
 * garbage.
 */

import { RgbImage, resizeBicubic } from "./image";
import { gaussianPair, hashString, mulberry32, renderLabel } from "./render";
import { NamedTensor } from "./uckp";

export interface ModelSpec {
  id: string;
  inputSize: number;
  outputDim: number;
}

export const MODELS: Record<string, ModelSpec> = {
  "tiny-rgb-64": { id: "tiny-rgb-64", inputSize: 64, outputDim: 64 },
  "tiny-rgb-32": { id: "tiny-rgb-32", inputSize: 64, outputDim: 32 },
};

export class UnknownModelError extends Error {
  constructor(id: string) {
    super(`unknown model_id ${JSON.stringify(id)}; available: ${Object.keys(MODELS).join(", ")}`);
  }
}

export function getModel(id: string): ModelSpec {
  const spec = MODELS[id];
  if (!spec) throw new UnknownModelError(id);
  return spec;
}

const GRID = 4;
const ORIENT_BINS = 8;
const ORIENT_GRID = 2;
const RGB_OCC_BINS = 8;
const RINGS = 6;
const HUE_BINS = 8;
const SECTORS = 8;

interface Group {
  values: Float64Array;
  weight: number;
}

// groups whose entries are already scale-free fractions keep their
// magnitudes (a fixed multiplier only); groups with arbitrary energy
// (edge mass, contrast) are unit-normalized. Multipliers balance the
// typical norms so color identity and shape structure both matter.
const GROUP_WEIGHTS = {
  meanColor: 1.0,   // fixed scale
  hue: 1.5,         // fixed scale
  cellColor: 0.8,   // unit
  cellSpread: 0.25, // unit
  orientGlobal: 1.2, // unit
  orientGrid: 0.5,  // unit
  colorOcc: 1.0,    // fixed scale
  foreground: 1.5,  // fixed scale
  shape: 1.2,       // fixed scale
};

export const RAW_FEATURE_DIM =
  3 +                                       // global mean color
  HUE_BINS +                                // saturation-weighted hue histogram
  GRID * GRID * 3 +                         // centered cell color means
  GRID * GRID +                             // cell luminance spread
  (ORIENT_BINS + 1) +                       // global orientation: residual + uniform mass
  ORIENT_GRID * ORIENT_GRID * (ORIENT_BINS + 1) + // spatial orientation, same split
  RGB_OCC_BINS +                            // color occupancy
  (RINGS + 2) +                             // foreground rings + area + compactness
  (SECTORS + 3);                            // angular mass, compactness, asymmetry, box fill

function normalized(values: Float64Array, weight: number): Group {
  let sq = 0;
  for (const v of values) sq += v * v;
  // the floor keeps near-empty histograms small instead of blowing
  // their noise up to a full-weight unit vector
  const scale = weight / Math.max(Math.sqrt(sq), 0.05);
  const out = new Float64Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = values[i] * scale;
  return { values: out, weight };
}

function scaled(values: Float64Array, factor: number): Group {
  const out = new Float64Array(values.length);
  for (let i = 0; i < values.length; i++) out[i] = values[i] * factor;
  return { values: out, weight: factor };
}

/** Feature stack over float RGB (0..255) of shape size x size. */
export function rawFeatures(rgb: Float64Array, size: number): Float64Array {
  const nPix = size * size;
  const lum = new Float64Array(nPix);
  for (let i = 0; i < nPix; i++) {
    lum[i] = (0.299 * rgb[i * 3] + 0.587 * rgb[i * 3 + 1] + 0.114 * rgb[i * 3 + 2]) / 255;
  }

  // global mean color
  const meanColor = new Float64Array(3);
  for (let p = 0; p < nPix; p++) for (let c = 0; c < 3; c++) meanColor[c] += rgb[p * 3 + c] / 255;
  for (let c = 0; c < 3; c++) meanColor[c] /= nPix;

  // saturation-weighted hue histogram
  const hue = new Float64Array(HUE_BINS);
  for (let p = 0; p < nPix; p++) {
    const r = rgb[p * 3] / 255;
    const g = rgb[p * 3 + 1] / 255;
    const b = rgb[p * 3 + 2] / 255;
    const mx = Math.max(r, g, b);
    const mn = Math.min(r, g, b);
    const sat = mx - mn;
    if (sat < 0.08) continue;
    let h: number;
    if (mx === r) h = ((g - b) / sat + 6) % 6;
    else if (mx === g) h = (b - r) / sat + 2;
    else h = (r - g) / sat + 4;
    hue[Math.min(HUE_BINS - 1, Math.floor((h / 6) * HUE_BINS))] += sat / nPix;
  }

  // per-cell color means (centered on the global mean) and luminance spread
  const cell = size / GRID;
  const cellColor = new Float64Array(GRID * GRID * 3);
  const cellSpread = new Float64Array(GRID * GRID);
  for (let gy = 0; gy < GRID; gy++) {
    for (let gx = 0; gx < GRID; gx++) {
      const sum = [0, 0, 0];
      let lumSum = 0;
      let lumSq = 0;
      let count = 0;
      for (let y = Math.floor(gy * cell); y < Math.floor((gy + 1) * cell); y++) {
        for (let x = Math.floor(gx * cell); x < Math.floor((gx + 1) * cell); x++) {
          const p = y * size + x;
          for (let c = 0; c < 3; c++) sum[c] += rgb[p * 3 + c] / 255;
          lumSum += lum[p];
          lumSq += lum[p] * lum[p];
          count++;
        }
      }
      const g = gy * GRID + gx;
      for (let c = 0; c < 3; c++) cellColor[g * 3 + c] = sum[c] / count - meanColor[c];
      const mean = lumSum / count;
      cellSpread[g] = Math.sqrt(Math.max(0, lumSq / count - mean * mean));
    }
  }

  // Sobel edge orientations on a 3x3-box-blurred plane (noise gradients
  // would otherwise smear the histograms toward uniform): one global
  // histogram (translation-robust) plus a coarse spatial grid
  const blurred = new Float64Array(nPix);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      let acc = 0;
      let count = 0;
      for (let dy = -1; dy <= 1; dy++) {
        for (let dx = -1; dx <= 1; dx++) {
          const yy = y + dy;
          const xx = x + dx;
          if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
          acc += lum[yy * size + xx];
          count++;
        }
      }
      blurred[y * size + x] = acc / count;
    }
  }
  const orientGlobal = new Float64Array(ORIENT_BINS);
  const orientGrid = new Float64Array(ORIENT_GRID * ORIENT_GRID * ORIENT_BINS);
  for (let y = 1; y < size - 1; y++) {
    for (let x = 1; x < size - 1; x++) {
      const p = (yy: number, xx: number) => blurred[yy * size + xx];
      const gx =
        p(y - 1, x + 1) + 2 * p(y, x + 1) + p(y + 1, x + 1) -
        p(y - 1, x - 1) - 2 * p(y, x - 1) - p(y + 1, x - 1);
      const gy =
        p(y + 1, x - 1) + 2 * p(y + 1, x) + p(y + 1, x + 1) -
        p(y - 1, x - 1) - 2 * p(y - 1, x) - p(y - 1, x + 1);
      const mag = Math.hypot(gx, gy);
      if (mag < 0.2) continue; // stay above post-blur pixel-noise gradients
      let angle = Math.atan2(gy, gx);
      if (angle < 0) angle += Math.PI;
      if (angle >= Math.PI) angle -= Math.PI;
      // soft binning: edges that sit on a bin boundary (axis-aligned or
      // exact diagonals) must not flip bins under resampling jitter
      const pos = (angle / Math.PI) * ORIENT_BINS - 0.5;
      const lo = ((Math.floor(pos) % ORIENT_BINS) + ORIENT_BINS) % ORIENT_BINS;
      const hi = (lo + 1) % ORIENT_BINS;
      const frac = pos - Math.floor(pos);
      const cgx = Math.min(ORIENT_GRID - 1, Math.floor((x / size) * ORIENT_GRID));
      const cgy = Math.min(ORIENT_GRID - 1, Math.floor((y / size) * ORIENT_GRID));
      const cellBase = (cgy * ORIENT_GRID + cgx) * ORIENT_BINS;
      orientGlobal[lo] += mag * (1 - frac);
      orientGlobal[hi] += mag * frac;
      orientGrid[cellBase + lo] += mag * (1 - frac);
      orientGrid[cellBase + hi] += mag * frac;
    }
  }

  // each orientation histogram splits into its non-uniform residual and
  // one uniform-mass scalar: peaked distributions (stripes, box edges)
  // live in the residual, isotropic ones (circles) in the scalar, and a
  // flat noise pedestal only nudges the scalar instead of dragging every
  // histogram toward the isotropic ones
  const splitUniform = (hist: Float64Array, bins: number): Float64Array => {
    const blocks = hist.length / bins;
    const out = new Float64Array(blocks * (bins + 1));
    for (let blk = 0; blk < blocks; blk++) {
      let mean = 0;
      for (let b = 0; b < bins; b++) mean += hist[blk * bins + b] / bins;
      for (let b = 0; b < bins; b++) out[blk * (bins + 1) + b] = hist[blk * bins + b] - mean;
      out[blk * (bins + 1) + bins] = mean * Math.sqrt(bins);
    }
    return out;
  };
  const orientGlobalSplit = splitUniform(orientGlobal, ORIENT_BINS);
  const orientGridSplit = splitUniform(orientGrid, ORIENT_BINS);

  // global 2x2x2 color occupancy, sigmoid-softened so values near the
  // half-intensity boundary split their mass instead of flipping bins
  const colorOcc = new Float64Array(RGB_OCC_BINS);
  const soft = (v: number) => 1 / (1 + Math.exp(-(v - 128) / 16));
  for (let p = 0; p < nPix; p++) {
    const r = soft(rgb[p * 3]);
    const g = soft(rgb[p * 3 + 1]);
    const b = soft(rgb[p * 3 + 2]);
    for (let bit = 0; bit < RGB_OCC_BINS; bit++) {
      const wr = bit & 4 ? r : 1 - r;
      const wg = bit & 2 ? g : 1 - g;
      const wb = bit & 1 ? b : 1 - b;
      colorOcc[bit] += (wr * wg * wb) / nPix;
    }
  }

  // foreground profile: pixels far from the border color, binned by
  // distance from the foreground centroid in units of its RMS spread
  const border: number[] = [0, 0, 0];
  let borderCount = 0;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      if (y > 1 && y < size - 2 && x > 1 && x < size - 2) continue;
      const p = y * size + x;
      for (let c = 0; c < 3; c++) border[c] += rgb[p * 3 + c];
      borderCount++;
    }
  }
  for (let c = 0; c < 3; c++) border[c] /= borderCount;

  const fgRaw = new Uint8Array(nPix);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const p = y * size + x;
      const dist = Math.hypot(
        rgb[p * 3] - border[0],
        rgb[p * 3 + 1] - border[1],
        rgb[p * 3 + 2] - border[2]
      );
      if (dist > 60) fgRaw[p] = 1;
    }
  }
  // drop speckle: isolated threshold-crossers (noise) would drag the
  // centroid, spread and bounding box of the real foreground around
  const fgMask = new Uint8Array(nPix);
  let fgCount = 0;
  let cxSum = 0;
  let cySum = 0;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const p = y * size + x;
      if (!fgRaw[p]) continue;
      let neighbors = 0;
      if (x > 0 && fgRaw[p - 1]) neighbors++;
      if (x < size - 1 && fgRaw[p + 1]) neighbors++;
      if (y > 0 && fgRaw[p - size]) neighbors++;
      if (y < size - 1 && fgRaw[p + size]) neighbors++;
      if (neighbors >= 2) {
        fgMask[p] = 1;
        fgCount++;
        cxSum += x;
        cySum += y;
      }
    }
  }

  const foreground = new Float64Array(RINGS + 2);
  const shape = new Float64Array(SECTORS + 3);
  if (fgCount > 0) {
    const cx = cxSum / fgCount;
    const cy = cySum / fgCount;
    let rSq = 0;
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        if (fgMask[y * size + x]) rSq += (x - cx) ** 2 + (y - cy) ** 2;
      }
    }
    const rms = Math.sqrt(rSq / fgCount) + 1e-9;
    const reach = 2.2 * rms;
    let below = 0;
    let perimeter = 0;
    let minX = size;
    let maxX = -1;
    let minY = size;
    let maxY = -1;
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        const p = y * size + x;
        if (!fgMask[p]) continue;
        const dx = x - cx;
        const dy = y - cy;
        const ring = Math.min(RINGS - 1, Math.floor((Math.hypot(dx, dy) / reach) * RINGS));
        foreground[ring] += 1 / fgCount;
        // soft-binned angular mass; arms and corners sit exactly on
        // axis/diagonal directions, so hard sectors would flip on jitter
        const sectorPos = ((Math.atan2(dy, dx) + Math.PI) / (2 * Math.PI)) * SECTORS - 0.5;
        const sectorLo = ((Math.floor(sectorPos) % SECTORS) + SECTORS) % SECTORS;
        const sectorFrac = sectorPos - Math.floor(sectorPos);
        shape[sectorLo] += (1 - sectorFrac) / fgCount;
        shape[(sectorLo + 1) % SECTORS] += sectorFrac / fgCount;
        if (dy > 0) below++;
        if (x < minX) minX = x;
        if (x > maxX) maxX = x;
        if (y < minY) minY = y;
        if (y > maxY) maxY = y;
        if (x === 0 || !fgMask[p - 1]) perimeter++;
        if (x === size - 1 || !fgMask[p + 1]) perimeter++;
        if (y === 0 || !fgMask[p - size]) perimeter++;
        if (y === size - 1 || !fgMask[p + size]) perimeter++;
      }
    }
    foreground[RINGS] = fgCount / nPix;
    foreground[RINGS + 1] = fgCount / (Math.PI * reach * reach);
    // compactness against the taxicab boundary length: solid convex
    // blobs score high, arms/holes/speckle drive it down
    shape[SECTORS] = Math.min(1.5, (16 * fgCount) / (perimeter * perimeter + 1e-9));
    shape[SECTORS + 1] = (2 * below - fgCount) / fgCount;
    // solid boxes fill their bounding box; arms, rings and speckle leave gaps
    shape[SECTORS + 2] = fgCount / ((maxX - minX + 1) * (maxY - minY + 1));
  }

  // cell spreads share an additive noise floor (sensor noise raises every
  // cell equally); remove it so the profile keeps only the structure
  let minSpread = Infinity;
  for (const v of cellSpread) minSpread = Math.min(minSpread, v);
  for (let i = 0; i < cellSpread.length; i++) cellSpread[i] -= minSpread;

  const groups: Group[] = [
    scaled(meanColor, GROUP_WEIGHTS.meanColor),
    scaled(hue, GROUP_WEIGHTS.hue),
    normalized(cellColor, GROUP_WEIGHTS.cellColor),
    normalized(cellSpread, GROUP_WEIGHTS.cellSpread),
    normalized(orientGlobalSplit, GROUP_WEIGHTS.orientGlobal),
    normalized(orientGridSplit, GROUP_WEIGHTS.orientGrid),
    scaled(colorOcc, GROUP_WEIGHTS.colorOcc),
    scaled(foreground, GROUP_WEIGHTS.foreground),
    scaled(shape, GROUP_WEIGHTS.shape),
  ];
  const out = new Float64Array(RAW_FEATURE_DIM);
  let cursor = 0;
  for (const group of groups) {
    out.set(group.values, cursor);
    cursor += group.values.length;
  }
  return out;
}

/** Fixed projection from raw feature space to the model's output space. */
export function projectionMatrix(spec: ModelSpec): Float64Array {
  const rand = mulberry32(hashString(`proj:${spec.id}`));
  const weights = new Float64Array(spec.outputDim * RAW_FEATURE_DIM);
  for (let i = 0; i < weights.length; i += 2) {
    const [a, b] = gaussianPair(rand);
    weights[i] = a / Math.sqrt(RAW_FEATURE_DIM);
    if (i + 1 < weights.length) weights[i + 1] = b / Math.sqrt(RAW_FEATURE_DIM);
  }
  return weights;
}

export function exportProjection(spec: ModelSpec): NamedTensor {
  return {
    name: "proj.weight",
    dims: [spec.outputDim, RAW_FEATURE_DIM],
    data: Float32Array.from(projectionMatrix(spec)),
  };
}

export function embedImage(spec: ModelSpec, img: RgbImage): Float32Array {
  const resized = resizeBicubic(img, spec.inputSize, spec.inputSize);
  const raw = rawFeatures(resized, spec.inputSize);
  const proj = projectionMatrix(spec);
  const out = new Float32Array(spec.outputDim);
  for (let o = 0; o < spec.outputDim; o++) {
    let acc = 0;
    for (let i = 0; i < RAW_FEATURE_DIM; i++) acc += proj[o * RAW_FEATURE_DIM + i] * raw[i];
    out[o] = Math.fround(acc);
  }
  return out;
}

export function embedText(spec: ModelSpec, label: string): Float32Array {
  return embedImage(spec, renderLabel(label, { size: spec.inputSize }));
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}
