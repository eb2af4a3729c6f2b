#!/usr/bin/env node
/**
 * Batch extraction CLI.  Reads the same annotation/manifest JSONL as the
 * retrieval engine's tooling and writes SEMB galleries, embedded query
 * sets, or training JSONL.  Exit codes: 0 ok, 2 invalid input, 3 I/O.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";

import {
  DEFAULT_OPTIONS,
  ExtractOptions,
  cropSplitEmbeddings,
  extractImageEmbeddings,
  extractTextEmbedding,
  makeTrainSample,
} from "./extract.js";
import { imagePromptSet, RECAPTION_PROMPT, TEXT_PROMPT } from "./prompts.js";
import { encodeGallery } from "./semb.js";
import { FormatError, Gallery, ImageDecodeError, ItemEmbeddings, ModelLoadError } from "./types.js";

interface ManifestEntry {
  imageId: string;
  file: string;
  width?: number;
  height?: number;
}

function readManifest(path: string, imagesDir: string): ManifestEntry[] {
  const entries: ManifestEntry[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    const trimmed = line.trim();
    if (!trimmed) {
      return;
    }
    let obj: Record<string, unknown>;
    try {
      obj = JSON.parse(trimmed);
    } catch {
      throw new FormatError(`${path}:${index + 1}: invalid JSON`);
    }
    const imageId = obj.image_id;
    if (typeof imageId !== "string" || !imageId) {
      throw new FormatError(`${path}:${index + 1}: missing string field 'image_id'`);
    }
    const file = typeof obj.file === "string" ? obj.file : imageId;
    entries.push({
      imageId,
      file: join(imagesDir, file),
      width: typeof obj.width === "number" ? obj.width : undefined,
      height: typeof obj.height === "number" ? obj.height : undefined,
    });
  });
  return entries;
}

function writeGalleryFile(outPath: string, dim: number, items: ItemEmbeddings[]): void {
  const gallery: Gallery = { dim, normalized: false, items };
  writeFileSync(outPath, encodeGallery(gallery));
}

function commonOptions(values: Record<string, unknown>): ExtractOptions {
  return {
    seed: Number(values.seed ?? DEFAULT_OPTIONS.seed),
    dim: Number(values.dim ?? DEFAULT_OPTIONS.dim),
    layer: Number(values.layer ?? -1),
    device: typeof values.device === "string" ? values.device : undefined,
    cacheDir: process.env.SEMB_MODEL_CACHE,
  };
}

const COMMON_FLAGS = {
  model: { type: "string" as const, default: "stub" },
  seed: { type: "string" as const, default: "0" },
  dim: { type: "string" as const, default: "64" },
  layer: { type: "string" as const, default: "-1" },
  device: { type: "string" as const },
};

function cmdExtractImages(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      ...COMMON_FLAGS,
      manifest: { type: "string" },
      "images-dir": { type: "string", default: "." },
      out: { type: "string" },
    },
  });
  requireFlags(values, ["manifest", "out"]);
  const options = commonOptions(values);
  const entries = readManifest(values.manifest as string, values["images-dir"] as string);
  const items = entries.map((entry) =>
    extractImageEmbeddings(entry.file, entry.imageId, values.model as string, options),
  );
  writeGalleryFile(values.out as string, options.dim, items);
  console.log(`wrote ${items.length} items (dim ${options.dim}) to ${values.out}`);
  return 0;
}

function cmdCropSplit(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      ...COMMON_FLAGS,
      manifest: { type: "string" },
      "images-dir": { type: "string", default: "." },
      out: { type: "string" },
      grid: { type: "string", default: "2" },
    },
  });
  requireFlags(values, ["manifest", "out"]);
  const options = commonOptions(values);
  const n = Number(values.grid);
  const entries = readManifest(values.manifest as string, values["images-dir"] as string);
  const items = entries.map((entry) =>
    cropSplitEmbeddings(
      entry.file,
      entry.imageId,
      n,
      values.model as string,
      options,
      entry.width !== undefined && entry.height !== undefined
        ? { width: entry.width, height: entry.height }
        : undefined,
    ),
  );
  writeGalleryFile(values.out as string, options.dim, items);
  console.log(`wrote ${items.length} items (${n}x${n} crops + global) to ${values.out}`);
  return 0;
}

function cmdExtractTexts(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      ...COMMON_FLAGS,
      queries: { type: "string" },
      out: { type: "string" },
    },
  });
  requireFlags(values, ["queries", "out"]);
  const options = commonOptions(values);
  const outLines: string[] = [];
  const lines = readFileSync(values.queries as string, "utf-8").split("\n");
  lines.forEach((line, index) => {
    const trimmed = line.trim();
    if (!trimmed) {
      return;
    }
    let obj: Record<string, unknown>;
    try {
      obj = JSON.parse(trimmed);
    } catch {
      throw new FormatError(`${values.queries}:${index + 1}: invalid JSON`);
    }
    if (typeof obj.text !== "string" || typeof obj.query_id !== "string") {
      throw new FormatError(`${values.queries}:${index + 1}: needs query_id and text`);
    }
    const embedding = extractTextEmbedding(obj.text, values.model as string, options);
    outLines.push(JSON.stringify({ ...obj, embedding: Array.from(embedding) }));
  });
  writeFileSync(values.out as string, outLines.join("\n") + "\n");
  console.log(`wrote ${outLines.length} embedded queries to ${values.out}`);
  return 0;
}

function cmdMakeTrainData(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      ...COMMON_FLAGS,
      manifest: { type: "string" },
      "images-dir": { type: "string", default: "." },
      out: { type: "string" },
      encoding: { type: "string", default: "inline" },
    },
  });
  requireFlags(values, ["manifest", "out"]);
  const encoding = values.encoding as string;
  if (encoding !== "inline" && encoding !== "base64") {
    throw new FormatError(`--encoding must be inline or base64, got '${encoding}'`);
  }
  const options = commonOptions(values);
  const entries = readManifest(values.manifest as string, values["images-dir"] as string);
  const lines = entries.map((entry) =>
    JSON.stringify(
      makeTrainSample(entry.file, entry.imageId, values.model as string, options, encoding),
    ),
  );
  writeFileSync(values.out as string, lines.join("\n") + "\n");
  console.log(`wrote ${lines.length} training samples to ${values.out}`);
  return 0;
}

function cmdPrompts(): number {
  for (const { label, prompt } of imagePromptSet()) {
    console.log(`${label}\t${prompt}`);
  }
  console.log(`text\t${TEXT_PROMPT}`);
  console.log(`recaption\t${RECAPTION_PROMPT}`);
  return 0;
}

function requireFlags(values: Record<string, unknown>, names: string[]): void {
  for (const name of names) {
    if (values[name] === undefined) {
      throw new FormatError(`missing required flag --${name}`);
    }
  }
}

const USAGE = `usage: semb-extract <command> [flags]

commands:
  extract-images   --manifest m.jsonl --images-dir d --out g.semb [--model stub] [--seed N] [--dim D]
  crop-split       --manifest m.jsonl --images-dir d --out g.semb --grid 2 [...]
  extract-texts    --queries q.jsonl --out q_embedded.jsonl [...]
  make-train-data  --manifest m.jsonl --images-dir d --out train.jsonl [--encoding inline|base64] [...]
  prompts          print the prompt set

common flags: --model (default stub), --seed, --dim, --layer, --device
environment:  SEMB_MODEL_CACHE points a real backend at its weight cache
`;

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    switch (command) {
      case "extract-images":
        return cmdExtractImages(rest);
      case "crop-split":
        return cmdCropSplit(rest);
      case "extract-texts":
        return cmdExtractTexts(rest);
      case "make-train-data":
        return cmdMakeTrainData(rest);
      case "prompts":
        return cmdPrompts();
      case "--help":
      case "-h":
      case "help":
        process.stdout.write(USAGE);
        return 0;
      default:
        process.stderr.write(USAGE);
        return 2;
    }
  } catch (error) {
    if (
      error instanceof FormatError ||
      error instanceof ModelLoadError ||
      error instanceof ImageDecodeError ||
      error instanceof RangeError ||
      (error instanceof Error && error.name === "TypeError")
    ) {
      console.error(`error: ${(error as Error).message}`);
      return 2;
    }
    if (error instanceof Error && "code" in error) {
      console.error(`i/o error: ${error.message}`);
      return 3;
    }
    throw error;
  }
}

const isDirectRun = process.argv[1]?.endsWith("cli.js");
if (isDirectRun) {
  process.exit(main(process.argv.slice(2)));
}
