/**
 * Deterministic hash-based pseudo-embedder.
 *
 * A SHA-256 digest of (input bytes, tag string, seed) seeds a splitmix64
 * stream that is expanded to `dim` doubles in [-1, 1) and L2-normalized.
 * Identical (input, tag, seed) always yields the identical vector, with no
 * model download and no GPU, which is what CI needs.
 */

import { createHash } from "node:crypto";

const MASK = (1n << 64n) - 1n;

export function splitmix64(state: bigint): () => bigint {
  let s = state & MASK;
  return () => {
    s = (s + 0x9e3779b97f4a7c15n) & MASK;
    let z = s;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
    return (z ^ (z >> 31n)) & MASK;
  };
}

export function stubEmbedding(
  input: Buffer,
  tag: string,
  seed: number,
  dim: number,
): Float64Array {
  if (!Number.isInteger(seed) || seed < 0) {
    throw new RangeError(`seed must be a non-negative integer, got ${seed}`);
  }
  if (!Number.isInteger(dim) || dim < 1) {
    throw new RangeError(`dim must be a positive integer, got ${dim}`);
  }
  const seedBytes = Buffer.alloc(8);
  seedBytes.writeBigUInt64LE(BigInt(seed) & MASK);
  const digest = createHash("sha256")
    .update(input)
    .update(Buffer.from([0]))
    .update(Buffer.from(tag, "utf-8"))
    .update(Buffer.from([0]))
    .update(seedBytes)
    .digest();
  const next = splitmix64(digest.readBigUInt64LE(0));

  const out = new Float64Array(dim);
  let normSq = 0;
  for (let i = 0; i < dim; i++) {
    const u = Number(next() >> 11n) * 2 ** -53; // uniform in [0, 1)
    const v = 2 * u - 1;
    out[i] = v;
    normSq += v * v;
  }
  const norm = Math.sqrt(normSq);
  if (norm <= 1e-12) {
    throw new Error("stub produced a degenerate (near-zero) vector");
  }
  for (let i = 0; i < dim; i++) {
    out[i] /= norm;
  }
  return out;
}
