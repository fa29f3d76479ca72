import { describe, expect, it } from "vitest";

import {
  RgbImage,
  decodeImage,
  decodePng,
  decodePpm,
  encodePng,
  encodePpm,
  resizeBicubic,
} from "../src/image";
import { mulberry32 } from "../src/render";

function randomImage(width: number, height: number, seed: number): RgbImage {
  const rand = mulberry32(seed);
  const pixels = new Uint8Array(width * height * 3);
  for (let i = 0; i < pixels.length; i++) pixels[i] = Math.floor(rand() * 256);
  return { width, height, pixels };
}

describe("PPM codec", () => {
  it("round-trips", () => {
    const img = randomImage(13, 7, 1);
    const back = decodePpm(encodePpm(img));
    expect(back.width).toBe(13);
    expect(back.height).toBe(7);
    expect(Buffer.from(back.pixels).equals(Buffer.from(img.pixels))).toBe(true);
  });

  it("tolerates comments in the header", () => {
    const img = randomImage(2, 2, 2);
    const withComment = Buffer.concat([
      Buffer.from("P6\n# a comment\n2 2\n255\n", "ascii"),
      Buffer.from(img.pixels),
    ]);
    expect(decodePpm(withComment).pixels).toEqual(img.pixels);
  });

  it("rejects truncated pixel data", () => {
    const buf = encodePpm(randomImage(4, 4, 3));
    expect(() => decodePpm(buf.subarray(0, buf.length - 5))).toThrow(/truncated/);
  });
});

describe("PNG codec", () => {
  it("round-trips", () => {
    const img = randomImage(31, 17, 4);
    const back = decodePng(encodePng(img));
    expect(back.width).toBe(31);
    expect(back.height).toBe(17);
    expect(Buffer.from(back.pixels).equals(Buffer.from(img.pixels))).toBe(true);
  });

  it("rejects non-PNG bytes", () => {
    expect(() => decodePng(Buffer.from("definitely not a png"))).toThrow(/not a PNG/);
  });

  it("dispatch recognizes both formats and rejects the rest", () => {
    const img = randomImage(5, 5, 5);
    expect(decodeImage(encodePng(img), "x.png").pixels).toEqual(img.pixels);
    expect(decodeImage(encodePpm(img), "x.ppm").pixels).toEqual(img.pixels);
    expect(() => decodeImage(Buffer.from("JFIF..."), "x.jpg")).toThrow(/unrecognized/);
  });
});

describe("bicubic resize", () => {
  it("keeps constant images constant", () => {
    const img: RgbImage = {
      width: 9,
      height: 9,
      pixels: new Uint8Array(9 * 9 * 3).fill(137),
    };
    const out = resizeBicubic(img, 4, 6);
    for (const v of out) expect(v).toBeCloseTo(137, 6);
  });

  it("is the identity at the original size", () => {
    const img = randomImage(8, 8, 6);
    const out = resizeBicubic(img, 8, 8);
    for (let i = 0; i < out.length; i++) expect(out[i]).toBeCloseTo(img.pixels[i], 6);
  });

  it("preserves a horizontal gradient's ordering when downsampling", () => {
    const width = 32;
    const pixels = new Uint8Array(width * 4 * 3);
    for (let y = 0; y < 4; y++) {
      for (let x = 0; x < width; x++) {
        const v = Math.round((x / (width - 1)) * 255);
        pixels.set([v, v, v], (y * width + x) * 3);
      }
    }
    const out = resizeBicubic({ width, height: 4, pixels }, 8, 4);
    for (let x = 1; x < 8; x++) {
      expect(out[x * 3]).toBeGreaterThan(out[(x - 1) * 3]);
    }
  });

  it("stays inside the valid range on sharp edges", () => {
    // step edge: Catmull-Rom overshoots, so the clamp must hold
    const width = 16;
    const pixels = new Uint8Array(width * width * 3);
    for (let y = 0; y < width; y++)
      for (let x = width / 2; x < width; x++) pixels.set([255, 255, 255], (y * width + x) * 3);
    const out = resizeBicubic({ width, height: width, pixels }, 11, 11);
    for (const v of out) {
      expect(v).toBeGreaterThanOrEqual(0);
      expect(v).toBeLessThanOrEqual(255);
    }
  });
});
