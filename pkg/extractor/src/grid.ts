/**
 * Grid geometry and image-dimension sniffing.
 *
 * The cell layout must match the retrieval engine's tiering exactly: cells
 * tile the image, and when a dimension is not divisible by n the remainder
 * pixels go one each to the last columns (rows).  A cross-component test
 * compares this against the engine's tier output.
 */

import { ImageDecodeError } from "./types.js";

export interface Cell {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function gridCells(imageW: number, imageH: number, n: number): Cell[] {
  if (!Number.isInteger(n) || n < 1) {
    throw new RangeError(`grid n must be a positive integer, got ${n}`);
  }
  if (imageW < n || imageH < n) {
    throw new RangeError(`cannot split ${imageW}x${imageH} into ${n}x${n} cells`);
  }
  const widths = splitLengths(imageW, n);
  const heights = splitLengths(imageH, n);
  const cells: Cell[] = [];
  let y = 0;
  for (const h of heights) {
    let x = 0;
    for (const w of widths) {
      cells.push({ x, y, w, h });
      x += w;
    }
    y += h;
  }
  return cells;
}

function splitLengths(total: number, n: number): number[] {
  const base = Math.floor(total / n);
  const rem = total % n;
  return Array.from({ length: n }, (_, i) => base + (i >= n - rem ? 1 : 0));
}

export interface ImageSize {
  width: number;
  height: number;
}

/** Read the pixel dimensions from PNG or JPEG bytes without full decoding. */
export function imageSize(data: Buffer): ImageSize {
  const png = pngSize(data);
  if (png) {
    return png;
  }
  const jpeg = jpegSize(data);
  if (jpeg) {
    return jpeg;
  }
  throw new ImageDecodeError("unrecognized image format (PNG and JPEG are supported)");
}

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

function pngSize(data: Buffer): ImageSize | null {
  if (data.length < 24 || !data.subarray(0, 8).equals(PNG_SIGNATURE)) {
    return null;
  }
  if (data.subarray(12, 16).toString("ascii") !== "IHDR") {
    throw new ImageDecodeError("PNG signature without IHDR chunk");
  }
  return { width: data.readUInt32BE(16), height: data.readUInt32BE(20) };
}

function jpegSize(data: Buffer): ImageSize | null {
  if (data.length < 4 || data[0] !== 0xff || data[1] !== 0xd8) {
    return null;
  }
  let pos = 2;
  while (pos + 4 <= data.length) {
    if (data[pos] !== 0xff) {
      pos += 1;
      continue;
    }
    const marker = data[pos + 1];
    // standalone markers without a length field
    if (marker === 0xd8 || (marker >= 0xd0 && marker <= 0xd9) || marker === 0x01) {
      pos += 2;
      continue;
    }
    const length = data.readUInt16BE(pos + 2);
    const isSof =
      marker >= 0xc0 && marker <= 0xcf && marker !== 0xc4 && marker !== 0xc8 && marker !== 0xcc;
    if (isSof) {
      if (pos + 9 > data.length) {
        break;
      }
      return { height: data.readUInt16BE(pos + 5), width: data.readUInt16BE(pos + 7) };
    }
    pos += 2 + length;
  }
  throw new ImageDecodeError("JPEG stream has no frame header");
}
