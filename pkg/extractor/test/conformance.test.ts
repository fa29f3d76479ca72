/**
 * Cross-component conformance: everything the extractor emits must be
 * consumable by the retrieval engine through its public file formats
 * and CLI, extraction must be bit-stable, and matched image/label
 * pairs must beat a pool of random distractor labels by cosine.
 */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { encodePng, encodePpm } from "../src/image";
import { COLOR_WORDS, SHAPE_WORDS, mulberry32, renderLabel } from "../src/render";
import { decodeUemb } from "../src/uemb";

const CLI = path.join(__dirname, "..", "dist", "cli.js");
const MODEL = "tiny-rgb-64";

const MATCHED = [
  "red circle", "green square", "blue triangle", "yellow ring", "magenta cross",
  "cyan diamond", "white dots", "orange stripes", "purple circle", "gray square",
];

function idFor(label: string): string {
  return label.replace(/ /g, "_");
}

function engineValidate(file: string): string {
  return execFileSync("python3", ["-m", "uniembed.cli", "validate", file], {
    encoding: "utf-8",
  });
}

let workdir: string;
let imagesOut: string;
let labelsOut: string;
let distractors: string[];

beforeAll(() => {
  workdir = fs.mkdtempSync(path.join(os.tmpdir(), "conformance-"));
  const photoDir = path.join(workdir, "photos");
  fs.mkdirSync(photoDir);

  // ten "photographs": perturbed renderings, mixed formats
  MATCHED.forEach((label, i) => {
    const img = renderLabel(label, {
      size: 96,
      offsetX: (i % 3) * 5 - 5,
      offsetY: (i % 2) * 6 - 3,
      scale: 0.85 + (0.1 * (i % 4)) / 3,
      noise: 8,
      seed: 1000 + i,
    });
    const file = path.join(photoDir, idFor(label) + (i % 2 ? ".ppm" : ".png"));
    fs.writeFileSync(file, i % 2 ? encodePpm(img) : encodePng(img));
  });

  // 20 random distractor labels drawn from the rest of the vocabulary
  const pool: string[] = [];
  for (const color of Object.keys(COLOR_WORDS)) {
    for (const shape of SHAPE_WORDS) {
      const label = `${color} ${shape}`;
      if (!MATCHED.includes(label)) pool.push(label);
    }
  }
  const rand = mulberry32(42);
  for (let i = pool.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [pool[i], pool[j]] = [pool[j], pool[i]];
  }
  distractors = pool.slice(0, 20);

  const labelsFile = path.join(workdir, "labels.txt");
  fs.writeFileSync(labelsFile, [...MATCHED, ...distractors].join("\n") + "\n");

  imagesOut = path.join(workdir, "images.uemb");
  labelsOut = path.join(workdir, "labels.uemb");
  execFileSync("node", [CLI, "images", photoDir, "--model", MODEL, "-o", imagesOut]);
  execFileSync("node", [CLI, "text", path.join(workdir, "labels.txt"), "--model", MODEL, "-o", labelsOut]);
});

afterAll(() => {
  fs.rmSync(workdir, { recursive: true, force: true });
});

describe("engine acceptance of emitted files", () => {
  it("image set passes engine validate with zero violations", () => {
    expect(engineValidate(imagesOut)).toMatch(/^OK: 10 rows, dim 64/);
  });

  it("label set passes engine validate with zero violations", () => {
    expect(engineValidate(labelsOut)).toMatch(/^OK: 30 rows, dim 64/);
  });

  it("engine can read the exported projection checkpoint", () => {
    const weights = path.join(workdir, "proj.uckp");
    execFileSync("node", [
      CLI, "text", path.join(workdir, "labels.txt"), "--model", MODEL,
      "-o", path.join(workdir, "again.uemb"), "--export-weights", weights,
    ]);
    const names = execFileSync(
      "python3",
      ["-c", `from uniembed import load_checkpoint; print(load_checkpoint(${JSON.stringify(weights)}).names())`],
      { encoding: "utf-8" }
    );
    expect(names.trim()).toBe("['proj.weight']");
  });
});

describe("bit stability", () => {
  it("repeated extraction is byte-identical", () => {
    const again = path.join(workdir, "images_again.uemb");
    execFileSync("node", [CLI, "images", path.join(workdir, "photos"), "--model", MODEL, "-o", again]);
    expect(fs.readFileSync(again).equals(fs.readFileSync(imagesOut))).toBe(true);

    const labelsAgain = path.join(workdir, "labels_again.uemb");
    execFileSync("node", [CLI, "text", path.join(workdir, "labels.txt"), "--model", MODEL, "-o", labelsAgain]);
    expect(fs.readFileSync(labelsAgain).equals(fs.readFileSync(labelsOut))).toBe(true);
  });
});

describe("image-text pairing", () => {
  it("each image ranks its own label above 20 random distractors by cosine", () => {
    const images = decodeUemb(fs.readFileSync(imagesOut));
    const labels = decodeUemb(fs.readFileSync(labelsOut));
    const labelRow = new Map<string, Float32Array>();
    labels.ids.forEach((id, r) =>
      labelRow.set(id, labels.data.slice(r * labels.dim, (r + 1) * labels.dim))
    );
    const cos = (a: Float32Array, b: Float32Array): number => {
      let dot = 0, na = 0, nb = 0;
      for (let i = 0; i < a.length; i++) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      return dot / Math.sqrt(na * nb);
    };
    for (const [r, id] of images.ids.entries()) {
      const label = MATCHED.find((l) => id.startsWith(idFor(l)));
      expect(label).toBeDefined();
      const row = images.data.slice(r * images.dim, (r + 1) * images.dim);
      const own = cos(row, labelRow.get(label!)!);
      for (const other of distractors) {
        expect(own, `${id} vs ${other}`).toBeGreaterThan(cos(row, labelRow.get(other)!));
      }
    }
  });
});
