/**
 * Procedural rasterizer for object labels.
 *
 * A label like "red circle" becomes a small RGB image: a colored shape
 * on a dark background. This is what makes the text side of the
 * extractor genuinely aligned with the image side: a label's embedding
 * is the image embedding of its rendering, so an actual picture of a
 * red circle and the words "red circle" land close together in feature
 * space, the way a jointly-trained two-tower encoder behaves.
 *
 * Unknown words still render (deterministic hash-derived tint and
 * outline) so arbitrary label files are accepted.
 */

import { RgbImage } from "./image";

export const COLOR_WORDS: Record<string, [number, number, number]> = {
  red: [220, 40, 40],
  green: [40, 190, 70],
  blue: [50, 90, 220],
  yellow: [230, 220, 50],
  magenta: [210, 60, 200],
  cyan: [60, 200, 210],
  white: [240, 240, 240],
  orange: [240, 140, 40],
  purple: [140, 60, 200],
  gray: [128, 128, 128],
};

export const SHAPE_WORDS = [
  "circle",
  "square",
  "triangle",
  "ring",
  "cross",
  "diamond",
  "stripes",
  "dots",
] as const;

export type ShapeWord = (typeof SHAPE_WORDS)[number];

export interface RenderOptions {
  size?: number;
  /** shape center offset in pixels */
  offsetX?: number;
  offsetY?: number;
  /** multiplies the default shape radius */
  scale?: number;
  /** gaussian pixel noise sigma (0..255 scale) */
  noise?: number;
  seed?: number;
}

export function hashString(s: string): number {
  let h = 2166136261 >>> 0;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 16777619) >>> 0;
  }
  return h >>> 0;
}

export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function gaussianPair(rand: () => number): [number, number] {
  const u = Math.max(rand(), 1e-12);
  const v = rand();
  const r = Math.sqrt(-2 * Math.log(u));
  return [r * Math.cos(2 * Math.PI * v), r * Math.sin(2 * Math.PI * v)];
}

interface ParsedLabel {
  color: [number, number, number];
  shape: ShapeWord | null;
  /** hash of leftover words; drives the fallback blob and tinting */
  residue: number;
}

export function parseLabel(label: string): ParsedLabel {
  const words = label.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
  let color: [number, number, number] | null = null;
  let shape: ShapeWord | null = null;
  const leftover: string[] = [];
  for (const word of words) {
    if (color === null && word in COLOR_WORDS) color = COLOR_WORDS[word];
    else if (shape === null && (SHAPE_WORDS as readonly string[]).includes(word)) {
      shape = word as ShapeWord;
    } else leftover.push(word);
  }
  const residue = leftover.length ? hashString(leftover.join(" ")) : 0;
  if (color === null) {
    if (residue) {
      const r = 80 + (residue % 176);
      const g = 80 + ((residue >>> 8) % 176);
      const b = 80 + ((residue >>> 16) % 176);
      color = [r, g, b];
    } else color = [200, 200, 200];
  }
  return { color, shape, residue };
}

function insideShape(
  shape: ShapeWord | null,
  residue: number,
  dx: number,
  dy: number,
  r: number
): boolean {
  const dist = Math.hypot(dx, dy);
  switch (shape) {
    case "circle":
      return dist <= r;
    case "square":
      return Math.abs(dx) <= r * 0.9 && Math.abs(dy) <= r * 0.9;
    case "triangle": {
      // upright triangle: base at +0.75r, apex at -r
      const yy = dy / r;
      const xx = Math.abs(dx) / r;
      return yy <= 0.75 && yy >= -1 && xx <= ((yy + 1) * 0.66);
    }
    case "ring":
      return dist <= r && dist >= r * 0.55;
    case "cross":
      return (Math.abs(dx) <= r * 0.28 && Math.abs(dy) <= r) ||
             (Math.abs(dy) <= r * 0.28 && Math.abs(dx) <= r);
    case "diamond":
      return Math.abs(dx) + Math.abs(dy) <= r * 1.15;
    case "stripes":
      return Math.abs(dx) <= r && Math.abs(dy) <= r &&
             Math.floor((dy + r) / (r / 2.0)) % 2 === 0;
    case "dots": {
      if (Math.abs(dx) > r || Math.abs(dy) > r) return false;
      const cell = r / 1.5;
      const mx = ((dx + r) % cell) - cell / 2;
      const my = ((dy + r) % cell) - cell / 2;
      return Math.hypot(mx, my) <= cell * 0.32;
    }
    default: {
      // hash-derived wobbly blob for labels without a known shape word
      const lobes = 3 + (residue % 4);
      const phase = ((residue >>> 4) % 628) / 100;
      const theta = Math.atan2(dy, dx);
      const wobble = 1 + 0.3 * Math.sin(lobes * theta + phase);
      return dist <= r * 0.8 * wobble;
    }
  }
}

const BACKGROUND: [number, number, number] = [26, 26, 26];

export function renderLabel(label: string, options: RenderOptions = {}): RgbImage {
  const size = options.size ?? 64;
  const scale = options.scale ?? 1;
  const noise = options.noise ?? 0;
  const { color, shape, residue } = parseLabel(label);
  const cx = (size - 1) / 2 + (options.offsetX ?? 0);
  const cy = (size - 1) / 2 + (options.offsetY ?? 0);
  const r = scale * 0.62 * (size / 2);

  const pixels = new Uint8Array(size * size * 3);
  const rand = mulberry32((options.seed ?? 0) ^ hashString(label));
  let spare: number | null = null;
  const nextGaussian = (): number => {
    if (spare !== null) {
      const v = spare;
      spare = null;
      return v;
    }
    const [a, b] = gaussianPair(rand);
    spare = b;
    return a;
  };

  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const inside = insideShape(shape, residue, x - cx, y - cy, r);
      const base = inside ? color : BACKGROUND;
      for (let c = 0; c < 3; c++) {
        let v = base[c];
        if (noise > 0) v += noise * nextGaussian();
        pixels[(y * size + x) * 3 + c] = Math.max(0, Math.min(255, Math.round(v)));
      }
    }
  }
  return { width: size, height: size, pixels };
}
