#!/usr/bin/env node
/**
 * extract: image folders and label files -> UEMB embedding sets.
 *
 *   extract images <dir>        --model <id> -o out.uemb [--normalize] [--export-weights w.uckp]
 *   extract text   <labels.txt> --model <id> -o out.uemb [--normalize] [--export-weights w.uckp]
 *
 * Exit codes: 0 success, 1 domain/file error, 2 usage error.
 * Undecodable images are skipped with a warning and listed in a
 * sidecar report (<out>.report.json); duplicate labels are
 * deduplicated with a warning and counted there too.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import {
  MODELS,
  UnknownModelError,
  embedImage,
  embedText,
  exportProjection,
  getModel,
} from "./encoder";
import { IMAGE_EXTENSIONS, ImageDecodeError, decodeImage } from "./image";
import { encodeUckp } from "./uckp";
import { EmbeddingSet, encodeUemb } from "./uemb";

const USAGE = `usage:
  extract images <dir>        --model <id> -o <out.uemb> [--normalize] [--export-weights <w.uckp>]
  extract text   <labels.txt> --model <id> -o <out.uemb> [--normalize] [--export-weights <w.uckp>]

models: ${Object.keys(MODELS).join(", ")}`;

interface Args {
  command: "images" | "text";
  input: string;
  model: string;
  output: string;
  normalize: boolean;
  exportWeights: string | null;
}

class UsageError extends Error {}

function parseArgs(argv: string[]): Args {
  const [command, input, ...rest] = argv;
  if (command !== "images" && command !== "text") {
    throw new UsageError(`unknown subcommand ${JSON.stringify(command ?? "")}`);
  }
  if (!input) throw new UsageError(`missing input path for '${command}'`);
  let model: string | null = null;
  let output: string | null = null;
  let normalize = false;
  let exportWeights: string | null = null;
  for (let i = 0; i < rest.length; i++) {
    const flag = rest[i];
    if (flag === "--model") model = rest[++i];
    else if (flag === "-o" || flag === "--output") output = rest[++i];
    else if (flag === "--normalize") normalize = true;
    else if (flag === "--export-weights") exportWeights = rest[++i];
    else throw new UsageError(`unknown flag ${JSON.stringify(flag)}`);
  }
  if (!model) throw new UsageError("--model is required");
  if (!output) throw new UsageError("-o/--output is required");
  return { command, input, model, output, normalize, exportWeights };
}

function walkImages(root: string): string[] {
  const found: string[] = [];
  const visit = (dir: string) => {
    for (const entry of fs.readdirSync(dir, { withFileTypes: true })) {
      const full = path.join(dir, entry.name);
      if (entry.isDirectory()) visit(full);
      else if (IMAGE_EXTENSIONS.has(path.extname(entry.name).toLowerCase())) found.push(full);
    }
  };
  visit(root);
  // relative posix paths double as stable, platform-independent ids
  return found
    .map((p) => path.relative(root, p).split(path.sep).join("/"))
    .sort();
}

function l2NormalizeRows(set: EmbeddingSet): void {
  for (let r = 0; r < set.ids.length; r++) {
    let sq = 0;
    for (let c = 0; c < set.dim; c++) sq += set.data[r * set.dim + c] ** 2;
    const norm = Math.sqrt(sq);
    if (norm <= 1e-12) throw new Error(`cannot normalize zero row (id ${set.ids[r]})`);
    for (let c = 0; c < set.dim; c++) set.data[r * set.dim + c] = Math.fround(set.data[r * set.dim + c] / norm);
  }
  set.normalized = true;
}

function runImages(args: Args): number {
  const spec = getModel(args.model);
  const relPaths = walkImages(args.input);
  const rows: Float32Array[] = [];
  const ids: string[] = [];
  const skipped: { path: string; reason: string }[] = [];
  for (const rel of relPaths) {
    const full = path.join(args.input, ...rel.split("/"));
    try {
      const img = decodeImage(fs.readFileSync(full), rel);
      rows.push(embedImage(spec, img));
      ids.push(rel);
    } catch (err) {
      if (err instanceof ImageDecodeError) {
        console.error(`warning: skipping ${rel}: ${err.message}`);
        skipped.push({ path: rel, reason: err.message });
      } else throw err;
    }
  }
  const data = new Float32Array(ids.length * spec.outputDim);
  rows.forEach((row, i) => data.set(row, i * spec.outputDim));
  const set: EmbeddingSet = { ids, dim: spec.outputDim, data, normalized: false };
  if (args.normalize) l2NormalizeRows(set);
  fs.writeFileSync(args.output, encodeUemb(set));
  if (skipped.length) {
    fs.writeFileSync(
      `${args.output}.report.json`,
      JSON.stringify({ model: spec.id, embedded: ids.length, skipped }, null, 2) + "\n"
    );
  }
  maybeExportWeights(args, spec.id);
  console.error(`embedded ${ids.length} images at dim ${spec.outputDim} (${skipped.length} skipped)`);
  return 0;
}

function runText(args: Args): number {
  const spec = getModel(args.model);
  const lines = fs
    .readFileSync(args.input, "utf-8")
    .split("\n")
    .map((line) => line.trim())
    .filter(Boolean);
  if (lines.length === 0) throw new Error(`empty labels file: ${args.input}`);
  const labels: string[] = [];
  const seen = new Set<string>();
  let duplicates = 0;
  for (const label of lines) {
    if (seen.has(label)) {
      duplicates++;
      continue;
    }
    seen.add(label);
    labels.push(label);
  }
  if (duplicates) console.error(`warning: ${duplicates} duplicate label(s) deduplicated`);
  const data = new Float32Array(labels.length * spec.outputDim);
  labels.forEach((label, i) => data.set(embedText(spec, label), i * spec.outputDim));
  const set: EmbeddingSet = { ids: labels, dim: spec.outputDim, data, normalized: false };
  if (args.normalize) l2NormalizeRows(set);
  fs.writeFileSync(args.output, encodeUemb(set));
  if (duplicates) {
    fs.writeFileSync(
      `${args.output}.report.json`,
      JSON.stringify({ model: spec.id, embedded: labels.length, duplicates }, null, 2) + "\n"
    );
  }
  maybeExportWeights(args, spec.id);
  console.error(`embedded ${labels.length} labels at dim ${spec.outputDim}`);
  return 0;
}

function maybeExportWeights(args: Args, modelId: string): void {
  if (!args.exportWeights) return;
  fs.writeFileSync(args.exportWeights, encodeUckp([exportProjection(getModel(modelId))]));
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}\n\n${USAGE}`);
    return 2;
  }
  try {
    return args.command === "images" ? runImages(args) : runText(args);
  } catch (err) {
    if (err instanceof UnknownModelError || err instanceof Error) {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
