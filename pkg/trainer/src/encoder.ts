/**
 * The pooled per-point MLP encoder, in a plain form for evaluation and a
 * tape form for training. Both compute exactly what the consumer package
 * computes from a PNLKW1 file: per layer y = scale * (x @ W^T + bias) +
 * shift with ReLU between layers (none after the last), then a max or avg
 * pool over points. An optional boolean mask excludes points from the pool
 * only — masked points still flow through the layers but can never win a
 * max or contribute to an avg.
 */

import {
  Tensor,
  addRow,
  avgPoolCols,
  constant,
  linear,
  maxPoolCols,
  mulRow,
  parameter,
  relu,
} from "./tensor.js";
import { EncoderWeights, Pooling } from "./weights.js";

/** Gradient-free encode of a flat N x 3 cloud -> feature vector (K). */
export function encodePlain(
  weights: EncoderWeights,
  cloud: Float64Array,
  mask: ArrayLike<boolean> | null = null,
): Float64Array {
  const n = cloud.length / 3;
  if (n === 0) throw new Error("cannot encode an empty cloud");
  if (mask !== null && mask.length !== n) {
    throw new Error(`mask has ${mask.length} entries for ${n} points`);
  }
  let x = cloud;
  let d = 3;
  const last = weights.layers.length - 1;
  for (let li = 0; li < weights.layers.length; li++) {
    const layer = weights.layers[li];
    const out = new Float64Array(n * layer.outDim);
    for (let i = 0; i < n; i++) {
      const xRow = i * d;
      const oRow = i * layer.outDim;
      for (let o = 0; o < layer.outDim; o++) {
        let acc = layer.bias[o];
        const wRow = o * d;
        for (let p = 0; p < d; p++) acc += x[xRow + p] * layer.weight[wRow + p];
        acc = acc * layer.scale[o] + layer.shift[o];
        out[oRow + o] = li !== last && acc < 0 ? 0 : acc;
      }
    }
    x = out;
    d = layer.outDim;
  }

  const feature = new Float64Array(d);
  if (weights.pooling === "max") {
    feature.fill(Number.NEGATIVE_INFINITY);
    let any = false;
    for (let i = 0; i < n; i++) {
      if (mask !== null && !mask[i]) continue;
      any = true;
      for (let j = 0; j < d; j++) {
        const v = x[i * d + j];
        if (v > feature[j]) feature[j] = v;
      }
    }
    if (!any) throw new Error("mask excludes every point; nothing to pool");
    return feature;
  }
  let count = 0;
  for (let i = 0; i < n; i++) {
    if (mask !== null && !mask[i]) continue;
    count++;
    for (let j = 0; j < d; j++) feature[j] += x[i * d + j];
  }
  if (count === 0) throw new Error("mask excludes every point; nothing to pool");
  for (let j = 0; j < d; j++) feature[j] /= count;
  return feature;
}

/** One MLP layer as trainable tape parameters. */
export interface TrainableLayer {
  weight: Tensor; // out x in
  bias: Tensor; // 1 x out
  scale: Tensor; // 1 x out
  shift: Tensor; // 1 x out
  inDim: number;
  outDim: number;
}

export interface TrainableEncoder {
  layers: TrainableLayer[];
  pooling: Pooling;
}

/** Lift plain weights into long-lived parameter tensors. */
export function toTrainable(weights: EncoderWeights): TrainableEncoder {
  return {
    pooling: weights.pooling,
    layers: weights.layers.map((l) => ({
      weight: parameter(l.outDim, l.inDim, l.weight),
      bias: parameter(1, l.outDim, l.bias),
      scale: parameter(1, l.outDim, l.scale),
      shift: parameter(1, l.outDim, l.shift),
      inDim: l.inDim,
      outDim: l.outDim,
    })),
  };
}

/** Snapshot trainable parameters back into plain weights. */
export function toWeights(enc: TrainableEncoder): EncoderWeights {
  return {
    pooling: enc.pooling,
    layers: enc.layers.map((l) => ({
      weight: Float64Array.from(l.weight.data),
      bias: Float64Array.from(l.bias.data),
      scale: Float64Array.from(l.scale.data),
      shift: Float64Array.from(l.shift.data),
      inDim: l.inDim,
      outDim: l.outDim,
    })),
  };
}

/** Every trainable tensor of the encoder, for the optimizer to walk. */
export function parametersOf(enc: TrainableEncoder): Tensor[] {
  return enc.layers.flatMap((l) => [l.weight, l.bias, l.scale, l.shift]);
}

/** Differentiable encode of a cloud tensor (N x 3) -> feature (1 x K). */
export function encodeT(
  enc: TrainableEncoder,
  cloud: Tensor,
  mask: ArrayLike<boolean> | null = null,
): Tensor {
  let x = cloud;
  const last = enc.layers.length - 1;
  for (let i = 0; i < enc.layers.length; i++) {
    const layer = enc.layers[i];
    x = addRow(linear(x, layer.weight), layer.bias);
    x = addRow(mulRow(x, layer.scale), layer.shift);
    if (i !== last) x = relu(x);
  }
  return enc.pooling === "max" ? maxPoolCols(x, mask) : avgPoolCols(x, mask);
}

/** Wrap a flat cloud as a constant tensor for encodeT. */
export function cloudTensor(cloud: Float64Array): Tensor {
  return constant(cloud.length / 3, 3, cloud);
}
