/**
 * The PNLKW1 binary weight container — the boundary contract between this
 * trainer and the consumer package.
 *
 * Layout, all little-endian: 8-byte magic "PNLKW1\0\0", pooling byte
 * (0 max / 1 avg), u32 layer count, then per layer u32 in, u32 out followed
 * by float32 arrays weight (out x in row-major), bias, scale, shift
 * (out each), closed by a CRC-32 of all preceding bytes.
 *
 * Weights train in float64 and are quantized to float32 only at this
 * boundary; quantizeWeights() applies the same rounding in memory so
 * features recorded in the manifest are computed from exactly the numbers
 * the consumer will read back.
 */

import { renameSync, writeFileSync, readFileSync } from "node:fs";
import { Rng } from "./rng.js";

export const WEIGHTS_MAGIC = Buffer.from("PNLKW1\0\0", "latin1");

export type Pooling = "max" | "avg";

const POOLING_CODE: Record<Pooling, number> = { max: 0, avg: 1 };
const POOLING_NAME: Record<number, Pooling> = { 0: "max", 1: "avg" };

export interface Layer {
  /** out x in, row-major. */
  weight: Float64Array;
  bias: Float64Array;
  scale: Float64Array;
  shift: Float64Array;
  inDim: number;
  outDim: number;
}

export interface EncoderWeights {
  layers: Layer[];
  pooling: Pooling;
}

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

/** Layer widths including the input: (3, ...hidden, out). */
export function dimsOf(weights: EncoderWeights): number[] {
  return [3, ...weights.layers.map((l) => l.outDim)];
}

export function featureDim(weights: EncoderWeights): number {
  return weights.layers[weights.layers.length - 1].outDim;
}

/** Random untrained weights: scaled-Gaussian linear part, identity affine. */
export function randomWeights(dims: number[], pooling: Pooling, seed: number): EncoderWeights {
  if (dims.length < 2 || dims[0] !== 3) {
    throw new Error(`dims must start at 3 with at least one layer, got ${dims.join(",")}`);
  }
  const rng = new Rng(seed, 7);
  const layers: Layer[] = [];
  for (let i = 1; i < dims.length; i++) {
    const inDim = dims[i - 1];
    const outDim = dims[i];
    const weight = new Float64Array(outDim * inDim);
    const sd = 1 / Math.sqrt(inDim);
    for (let j = 0; j < weight.length; j++) weight[j] = sd * rng.gaussian();
    layers.push({
      weight,
      bias: new Float64Array(outDim),
      scale: new Float64Array(outDim).fill(1),
      shift: new Float64Array(outDim),
      inDim,
      outDim,
    });
  }
  return { layers, pooling };
}

export function cloneWeights(weights: EncoderWeights): EncoderWeights {
  return {
    pooling: weights.pooling,
    layers: weights.layers.map((l) => ({
      weight: Float64Array.from(l.weight),
      bias: Float64Array.from(l.bias),
      scale: Float64Array.from(l.scale),
      shift: Float64Array.from(l.shift),
      inDim: l.inDim,
      outDim: l.outDim,
    })),
  };
}

/** Round every parameter to float32 in place-of (returns a copy). */
export function quantizeWeights(weights: EncoderWeights): EncoderWeights {
  const q = (a: Float64Array) => Float64Array.from(Float32Array.from(a));
  return {
    pooling: weights.pooling,
    layers: weights.layers.map((l) => ({
      weight: q(l.weight),
      bias: q(l.bias),
      scale: q(l.scale),
      shift: q(l.shift),
      inDim: l.inDim,
      outDim: l.outDim,
    })),
  };
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let i = 0; i < 256; i++) {
    let c = i;
    for (let j = 0; j < 8; j++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[i] = c >>> 0;
  }
  return table;
})();

/** CRC-32 (IEEE 802.3, same polynomial as zlib). */
export function crc32(buf: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function f32Bytes(a: Float64Array): Buffer {
  const f = Float32Array.from(a);
  // Serialized little-endian regardless of host order.
  const buf = Buffer.alloc(f.length * 4);
  for (let i = 0; i < f.length; i++) buf.writeFloatLE(f[i], i * 4);
  return buf;
}

/** Serialize weights to the PNLKW1 byte layout. */
export function formatWeights(weights: EncoderWeights): Buffer {
  const parts: Buffer[] = [WEIGHTS_MAGIC];
  const head = Buffer.alloc(5);
  head.writeUInt8(POOLING_CODE[weights.pooling], 0);
  head.writeUInt32LE(weights.layers.length, 1);
  parts.push(head);
  for (const layer of weights.layers) {
    const dims = Buffer.alloc(8);
    dims.writeUInt32LE(layer.inDim, 0);
    dims.writeUInt32LE(layer.outDim, 4);
    parts.push(dims, f32Bytes(layer.weight), f32Bytes(layer.bias), f32Bytes(layer.scale), f32Bytes(layer.shift));
  }
  const body = Buffer.concat(parts);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(body), 0);
  return Buffer.concat([body, tail]);
}

/** Parse a PNLKW1 blob, validating magic, CRC, and layer consistency. */
export function parseWeights(blob: Buffer): EncoderWeights {
  if (blob.length < WEIGHTS_MAGIC.length + 5 + 4) {
    throw new FormatError("weight file too short to be valid");
  }
  if (!blob.subarray(0, WEIGHTS_MAGIC.length).equals(WEIGHTS_MAGIC)) {
    throw new FormatError("bad magic; not a PNLKW1 weight file");
  }
  const body = blob.subarray(0, blob.length - 4);
  const storedCrc = blob.readUInt32LE(blob.length - 4);
  const actualCrc = crc32(body);
  if (storedCrc !== actualCrc) {
    throw new FormatError(
      `checksum mismatch: file says 0x${storedCrc.toString(16)}, content is 0x${actualCrc.toString(16)}`,
    );
  }
  let offset = WEIGHTS_MAGIC.length;
  const poolingCode = body.readUInt8(offset);
  const nLayers = body.readUInt32LE(offset + 1);
  offset += 5;
  const pooling = POOLING_NAME[poolingCode];
  if (pooling === undefined) throw new FormatError(`unknown pooling code ${poolingCode}`);

  const take = (count: number, what: string): Float64Array => {
    const nbytes = 4 * count;
    if (offset + nbytes > body.length) throw new FormatError(`truncated while reading ${what}`);
    const out = new Float64Array(count);
    for (let i = 0; i < count; i++) out[i] = body.readFloatLE(offset + i * 4);
    offset += nbytes;
    return out;
  };

  const layers: Layer[] = [];
  for (let i = 0; i < nLayers; i++) {
    if (offset + 8 > body.length) throw new FormatError(`truncated while reading header of layer ${i}`);
    const inDim = body.readUInt32LE(offset);
    const outDim = body.readUInt32LE(offset + 4);
    offset += 8;
    if (inDim === 0 || outDim === 0) {
      throw new FormatError(`layer ${i} has zero-sized dimension (${inDim} -> ${outDim})`);
    }
    layers.push({
      weight: take(outDim * inDim, `weights of layer ${i}`),
      bias: take(outDim, `biases of layer ${i}`),
      scale: take(outDim, `scales of layer ${i}`),
      shift: take(outDim, `shifts of layer ${i}`),
      inDim,
      outDim,
    });
  }
  if (offset !== body.length) {
    throw new FormatError(`${body.length - offset} unexpected trailing bytes before checksum`);
  }
  if (layers.length === 0) throw new FormatError("encoder needs at least one layer");
  if (layers[0].inDim !== 3) {
    throw new FormatError(`first layer must take 3 inputs, takes ${layers[0].inDim}`);
  }
  for (let i = 1; i < layers.length; i++) {
    if (layers[i - 1].outDim !== layers[i].inDim) {
      throw new FormatError(
        `layer ${i} expects ${layers[i].inDim} inputs but layer ${i - 1} emits ${layers[i - 1].outDim}`,
      );
    }
  }
  return { layers, pooling };
}

/**
 * Atomically write weights: serialize, write to a temp file in the same
 * directory, rename over the target, then re-read and re-parse the final
 * file to verify the export (CRC included) before returning.
 */
export function saveWeights(path: string, weights: EncoderWeights): void {
  const blob = formatWeights(weights);
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, blob);
  renameSync(tmp, path);
  const reread = parseWeights(readFileSync(path));
  if (reread.layers.length !== weights.layers.length || reread.pooling !== weights.pooling) {
    throw new FormatError(`export verification failed for ${path}`);
  }
}

export function loadWeights(path: string): EncoderWeights {
  return parseWeights(readFileSync(path));
}
