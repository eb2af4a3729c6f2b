/** Wire codes for embedding provenance; values match the SEMB format. */
export enum SourceKind {
  RegionalPrompt = 0,
  Crop = 1,
  Global = 2,
  SynonymPrompt = 3,
}

export interface EmbeddingRecord {
  kind: SourceKind;
  label: string;
  values: Float32Array;
}

export interface ItemEmbeddings {
  itemId: string;
  records: EmbeddingRecord[];
}

export interface Gallery {
  dim: number;
  normalized: boolean;
  items: ItemEmbeddings[];
}

export interface RegionTexts {
  left_upper: string;
  right_upper: string;
  left_lower: string;
  right_lower: string;
  summary: string;
}

export class ModelLoadError extends Error {}

export class ImageDecodeError extends Error {}

export class ModelOutputUnparseable extends Error {}

export class FormatError extends Error {}
