/**
 * Embedding extraction with a pluggable model backend.
 *
 * Only the "stub" backend is bundled: it hashes (input bytes, prompt, seed)
 * into deterministic unit vectors, so every pipeline stage runs in CI with
 * no model weights.  A real multimodal model plugs in behind the same
 * interface (last-token hidden state of a configurable layer); pass its
 * identifier as the model spec once such a backend is installed.
 */

import { readFileSync } from "node:fs";

import { Cell, gridCells, imageSize } from "./grid.js";
import {
  REGION_LABELS,
  RegionLabel,
  SUMMARY_IMAGE_PROMPT,
  TEXT_PROMPT,
  regionalImagePrompt,
} from "./prompts.js";
import { stubEmbedding } from "./stub.js";
import {
  EmbeddingRecord,
  ImageDecodeError,
  ItemEmbeddings,
  ModelLoadError,
  ModelOutputUnparseable,
  RegionTexts,
  SourceKind,
} from "./types.js";

export interface ExtractOptions {
  seed: number;
  dim: number;
  /** Hidden layer to pool from in a real backend; -1 means the last one. */
  layer?: number;
  /** GPU/CPU selector for a real backend; the stub ignores it. */
  device?: string;
  /** Weight cache directory for a real backend (SEMB_MODEL_CACHE env). */
  cacheDir?: string;
}

export const DEFAULT_OPTIONS: ExtractOptions = { seed: 0, dim: 64, layer: -1 };

export interface ModelBackend {
  /** Embed raw input bytes conditioned on a prompt tag. */
  embed(input: Buffer, promptTag: string): Float64Array;
  /** Structured per-region captions for an image. */
  caption(imageBytes: Buffer): RegionTexts;
}

class StubBackend implements ModelBackend {
  constructor(private readonly options: ExtractOptions) {}

  embed(input: Buffer, promptTag: string): Float64Array {
    return stubEmbedding(input, promptTag, this.options.seed, this.options.dim);
  }

  caption(_imageBytes: Buffer): RegionTexts {
    return { ...STUB_CAPTIONS };
  }
}

/** Canned captions the stub backend returns for every image. */
export const STUB_CAPTIONS: RegionTexts = {
  left_upper:
    "A weathered wooden signpost leans beside a gravel path, its faded blue arrow " +
    "pointing toward a cluster of distant pines under an overcast sky.",
  right_upper:
    "Power lines cross a pale morning sky, and a small kestrel perches on the " +
    "second wire, feathers ruffled by the wind above the tiled rooftops.",
  left_lower:
    "A rusted red bicycle with a wicker basket rests against a low stone wall, " +
    "one tire flat, surrounded by dandelions pushing through the pavement cracks.",
  right_lower:
    "Two paper coffee cups sit abandoned on a green bench, their lids askew, " +
    "next to a folded newspaper dampened by last night's rain.",
  summary:
    "A quiet suburban street corner on a grey morning, where small worn objects, " +
    "a signpost, a bicycle, a perched bird, hint at daily routines.",
};

export function resolveBackend(modelSpec: string, options: ExtractOptions): ModelBackend {
  if (modelSpec === "stub") {
    return new StubBackend(options);
  }
  throw new ModelLoadError(
    `no backend available for model '${modelSpec}': only 'stub' is bundled; ` +
      "install a real multimodal backend and register it behind ModelBackend",
  );
}

function readImage(imagePath: string): Buffer {
  const bytes = readFileSync(imagePath);
  if (bytes.length === 0) {
    throw new ImageDecodeError(`image file is empty: ${imagePath}`);
  }
  return bytes;
}

function toRecord(kind: SourceKind, label: string, values: Float64Array): EmbeddingRecord {
  return { kind, label, values: Float32Array.from(values) };
}

/** Five features per image: four regional prompts plus the global summary. */
export function extractImageEmbeddings(
  imagePath: string,
  itemId: string,
  modelSpec: string,
  options: ExtractOptions = DEFAULT_OPTIONS,
): ItemEmbeddings {
  const backend = resolveBackend(modelSpec, options);
  const bytes = readImage(imagePath);
  const records: EmbeddingRecord[] = REGION_LABELS.map((label) =>
    toRecord(
      SourceKind.RegionalPrompt,
      label,
      backend.embed(bytes, regionalImagePrompt(label)),
    ),
  );
  records.push(
    toRecord(SourceKind.Global, "summary", backend.embed(bytes, SUMMARY_IMAGE_PROMPT)),
  );
  return { itemId, records };
}

export function extractTextEmbedding(
  text: string,
  modelSpec: string,
  options: ExtractOptions = DEFAULT_OPTIONS,
): Float64Array {
  if (!text) {
    throw new RangeError("cannot embed an empty text");
  }
  const backend = resolveBackend(modelSpec, options);
  return backend.embed(Buffer.from(text, "utf-8"), TEXT_PROMPT);
}

/**
 * Grid-crop features: one per cell, tagged with the row-major cell index,
 * plus the global embedding (K = n^2 + 1).  Cell geometry matches the
 * retrieval engine's tiering rule.  Dimensions come from the caller when
 * known (annotation files carry them) and are sniffed from the file
 * otherwise.
 */
export function cropSplitEmbeddings(
  imagePath: string,
  itemId: string,
  n: number,
  modelSpec: string,
  options: ExtractOptions = DEFAULT_OPTIONS,
  knownSize?: { width: number; height: number },
): ItemEmbeddings {
  const backend = resolveBackend(modelSpec, options);
  const bytes = readImage(imagePath);
  const size = knownSize ?? imageSize(bytes);
  const cells = gridCells(size.width, size.height, n);
  const records = cells.map((cell, index) =>
    toRecord(SourceKind.Crop, String(index), backend.embed(bytes, cropTag(cell, index))),
  );
  records.push(
    toRecord(SourceKind.Global, "summary", backend.embed(bytes, SUMMARY_IMAGE_PROMPT)),
  );
  return { itemId, records };
}

// The real pipeline feeds cropped pixels to the summary prompt; the stub
// cannot crop, so the crop geometry is folded into the prompt tag instead.
function cropTag(cell: Cell, index: number): string {
  return `${SUMMARY_IMAGE_PROMPT}#crop=${index}:${cell.x},${cell.y},${cell.w},${cell.h}`;
}

/** Per-region captions (left/right upper/lower plus summary). */
export function recaption(
  imagePath: string,
  modelSpec: string,
  options: ExtractOptions = DEFAULT_OPTIONS,
): RegionTexts {
  const backend = resolveBackend(modelSpec, options);
  return backend.caption(readImage(imagePath));
}

const RECAPTION_KEYS: Record<string, keyof RegionTexts> = {
  "left upper": "left_upper",
  "right upper": "right_upper",
  "left lower": "left_lower",
  "right lower": "right_lower",
  summary: "summary",
};

/**
 * Parse a model's structured captioning output (a JSON dictionary with the
 * keys 'left upper', 'right upper', 'left lower', 'right lower',
 * 'summary').  Missing or malformed fields raise, never partial data.
 */
export function parseRecaptionOutput(raw: string): RegionTexts {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    throw new ModelOutputUnparseable("captioning output is not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new ModelOutputUnparseable("captioning output is not a JSON dictionary");
  }
  const record = parsed as Record<string, unknown>;
  const out: Partial<RegionTexts> = {};
  for (const [rawKey, field] of Object.entries(RECAPTION_KEYS)) {
    const value = record[rawKey];
    if (typeof value !== "string" || value.length === 0) {
      throw new ModelOutputUnparseable(`captioning output is missing key '${rawKey}'`);
    }
    out[field] = value;
  }
  return out as RegionTexts;
}

export interface TrainSampleJson {
  item_id: string;
  region_texts: Record<string, string>;
  image_embeddings: Record<string, number[] | string>;
  text_embeddings: Record<string, number[] | string>;
}

/**
 * One training sample: regional image embeddings aligned with the text
 * embeddings of that region's caption.  Matches the trainer's JSONL schema.
 */
export function makeTrainSample(
  imagePath: string,
  itemId: string,
  modelSpec: string,
  options: ExtractOptions = DEFAULT_OPTIONS,
  encoding: "inline" | "base64" = "inline",
): TrainSampleJson {
  const backend = resolveBackend(modelSpec, options);
  const bytes = readImage(imagePath);
  const texts = backend.caption(bytes);

  const regionTexts: Record<string, string> = {};
  const imageEmbeddings: Record<string, number[] | string> = {};
  const textEmbeddings: Record<string, number[] | string> = {};
  for (const label of REGION_LABELS) {
    const caption = texts[label as RegionLabel];
    regionTexts[label] = caption;
    imageEmbeddings[label] = encodeVector(
      backend.embed(bytes, regionalImagePrompt(label)),
      encoding,
    );
    textEmbeddings[label] = encodeVector(
      backend.embed(Buffer.from(caption, "utf-8"), TEXT_PROMPT),
      encoding,
    );
  }
  return {
    item_id: itemId,
    region_texts: regionTexts,
    image_embeddings: imageEmbeddings,
    text_embeddings: textEmbeddings,
  };
}

function encodeVector(values: Float64Array, encoding: "inline" | "base64"): number[] | string {
  if (encoding === "base64") {
    const payload = Buffer.alloc(4 * values.length);
    for (let i = 0; i < values.length; i++) {
      payload.writeFloatLE(values[i], 4 * i);
    }
    return payload.toString("base64");
  }
  return Array.from(values);
}
