/**
 * Image decoding and resampling.
 *
 * Decoders cover binary PPM (P6) and 8-bit non-interlaced PNG
 * (truecolor with or without alpha); both come back as interleaved
 * 8-bit RGB. Resampling is separable bicubic (Catmull-Rom), matching
 * the preprocessing the upstream encoders expect.
 */

import * as zlib from "node:zlib";

export interface RgbImage {
  width: number;
  height: number;
  /** interleaved RGB, length width*height*3 */
  pixels: Uint8Array;
}

export class ImageDecodeError extends Error {}

// ---------------------------------------------------------------- PPM (P6)

export function decodePpm(buf: Buffer): RgbImage {
  let pos = 0;
  const token = (): string => {
    while (pos < buf.length) {
      const ch = buf[pos];
      if (ch === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
        pos++;
      } else break;
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (start === pos) throw new ImageDecodeError("unexpected end of PPM header");
    return buf.subarray(start, pos).toString("ascii");
  };

  if (token() !== "P6") throw new ImageDecodeError("not a binary PPM (P6) file");
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0)) throw new ImageDecodeError("bad PPM dimensions");
  if (maxval !== 255) throw new ImageDecodeError(`unsupported PPM maxval ${maxval}`);
  pos++; // single whitespace after maxval
  const need = width * height * 3;
  if (buf.length < pos + need) throw new ImageDecodeError("truncated PPM pixel data");
  return { width, height, pixels: new Uint8Array(buf.subarray(pos, pos + need)) };
}

export function encodePpm(img: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(img.pixels)]);
}

// ------------------------------------------------------------------- PNG

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(...parts: Buffer[]): number {
  let c = 0xffffffff;
  for (const part of parts) {
    for (let i = 0; i < part.length; i++) c = CRC_TABLE[(c ^ part[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function decodePng(buf: Buffer): RgbImage {
  if (!buf.subarray(0, 8).equals(PNG_SIGNATURE)) throw new ImageDecodeError("not a PNG file");
  let pos = 8;
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Buffer[] = [];
  while (pos + 8 <= buf.length) {
    const length = buf.readUInt32BE(pos);
    const type = buf.subarray(pos + 4, pos + 8).toString("ascii");
    const data = buf.subarray(pos + 8, pos + 8 + length);
    pos += 12 + length; // length + type + data + crc
    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      const bitDepth = data.readUInt8(8);
      const colorType = data.readUInt8(9);
      const interlace = data.readUInt8(12);
      if (bitDepth !== 8) throw new ImageDecodeError(`unsupported PNG bit depth ${bitDepth}`);
      if (colorType === 2) channels = 3;
      else if (colorType === 6) channels = 4;
      else throw new ImageDecodeError(`unsupported PNG color type ${colorType}`);
      if (interlace !== 0) throw new ImageDecodeError("interlaced PNG is not supported");
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
  }
  if (!width || !idat.length) throw new ImageDecodeError("PNG missing IHDR or IDAT");

  let raw: Buffer;
  try {
    raw = zlib.inflateSync(Buffer.concat(idat));
  } catch {
    throw new ImageDecodeError("PNG zlib stream is corrupt");
  }
  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) throw new ImageDecodeError("PNG data length mismatch");

  const prior = new Uint8Array(stride);
  const pixels = new Uint8Array(width * height * 3);
  const line = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const rowOff = y * (stride + 1) + 1;
    for (let x = 0; x < stride; x++) {
      const cur = raw[rowOff + x];
      const left = x >= channels ? line[x - channels] : 0;
      const up = prior[x];
      const upLeft = x >= channels ? prior[x - channels] : 0;
      let value: number;
      switch (filter) {
        case 0: value = cur; break;
        case 1: value = cur + left; break;
        case 2: value = cur + up; break;
        case 3: value = cur + ((left + up) >> 1); break;
        case 4: {
          const p = left + up - upLeft;
          const pa = Math.abs(p - left);
          const pb = Math.abs(p - up);
          const pc = Math.abs(p - upLeft);
          value = cur + (pa <= pb && pa <= pc ? left : pb <= pc ? up : upLeft);
          break;
        }
        default: throw new ImageDecodeError(`unknown PNG filter ${filter} on row ${y}`);
      }
      line[x] = value & 0xff;
    }
    for (let px = 0; px < width; px++) {
      pixels[(y * width + px) * 3] = line[px * channels];
      pixels[(y * width + px) * 3 + 1] = line[px * channels + 1];
      pixels[(y * width + px) * 3 + 2] = line[px * channels + 2];
    }
    prior.set(line);
  }
  return { width, height, pixels };
}

export function encodePng(img: RgbImage): Buffer {
  const stride = img.width * 3;
  const raw = Buffer.alloc((stride + 1) * img.height);
  for (let y = 0; y < img.height; y++) {
    raw[y * (stride + 1)] = 0; // filter: none
    Buffer.from(img.pixels.subarray(y * stride, (y + 1) * stride)).copy(
      raw, y * (stride + 1) + 1
    );
  }
  const chunk = (type: string, data: Buffer): Buffer => {
    const head = Buffer.alloc(8);
    head.writeUInt32BE(data.length, 0);
    head.write(type, 4, "ascii");
    const crc = Buffer.alloc(4);
    crc.writeUInt32BE(crc32(head.subarray(4), data), 0);
    return Buffer.concat([head, data, crc]);
  };
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(img.width, 0);
  ihdr.writeUInt32BE(img.height, 4);
  ihdr.writeUInt8(8, 8);  // bit depth
  ihdr.writeUInt8(2, 9);  // truecolor
  return Buffer.concat([
    PNG_SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlib.deflateSync(raw, { level: 6 })),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

// --------------------------------------------------------------- dispatch

export function decodeImage(buf: Buffer, name: string): RgbImage {
  if (buf.subarray(0, 8).equals(PNG_SIGNATURE)) return decodePng(buf);
  if (buf.length >= 2 && buf[0] === 0x50 && buf[1] === 0x36) return decodePpm(buf);
  throw new ImageDecodeError(`unrecognized image format: ${name}`);
}

export const IMAGE_EXTENSIONS = new Set([".png", ".ppm"]);

// ------------------------------------------------------- bicubic resample

function cubicWeight(t: number): number {
  // Catmull-Rom kernel (a = -0.5)
  const a = -0.5;
  const x = Math.abs(t);
  if (x <= 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

/** Separable bicubic resize; returns float RGB in the 0..255 range. */
export function resizeBicubic(img: RgbImage, outW: number, outH: number): Float64Array {
  const { width: inW, height: inH, pixels } = img;
  const clampX = (v: number) => Math.min(inW - 1, Math.max(0, v));
  const clampY = (v: number) => Math.min(inH - 1, Math.max(0, v));

  // horizontal pass: inH rows of outW pixels
  const mid = new Float64Array(inH * outW * 3);
  const scaleX = inW / outW;
  for (let ox = 0; ox < outW; ox++) {
    const sx = (ox + 0.5) * scaleX - 0.5;
    const base = Math.floor(sx);
    const frac = sx - base;
    const w = [cubicWeight(frac + 1), cubicWeight(frac), cubicWeight(frac - 1), cubicWeight(frac - 2)];
    const cols = [clampX(base - 1), clampX(base), clampX(base + 1), clampX(base + 2)];
    for (let y = 0; y < inH; y++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        for (let k = 0; k < 4; k++) acc += w[k] * pixels[(y * inW + cols[k]) * 3 + c];
        mid[(y * outW + ox) * 3 + c] = acc;
      }
    }
  }

  const out = new Float64Array(outH * outW * 3);
  const scaleY = inH / outH;
  for (let oy = 0; oy < outH; oy++) {
    const sy = (oy + 0.5) * scaleY - 0.5;
    const base = Math.floor(sy);
    const frac = sy - base;
    const w = [cubicWeight(frac + 1), cubicWeight(frac), cubicWeight(frac - 1), cubicWeight(frac - 2)];
    const rows = [clampY(base - 1), clampY(base), clampY(base + 1), clampY(base + 2)];
    for (let ox = 0; ox < outW; ox++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        for (let k = 0; k < 4; k++) acc += w[k] * mid[(rows[k] * outW + ox) * 3 + c];
        out[(oy * outW + ox) * 3 + c] = Math.min(255, Math.max(0, acc));
      }
    }
  }
  return out;
}
