/**
 * Gradient training of the pooled-MLP encoder through the unrolled solver.
 *
 * Each step samples a batch of (template, random rigid motion, optional
 * noise) pairs, differentiates the mean pose loss through the unrolled
 * registration, and applies plain SGD with global-norm gradient clipping.
 * Progress is measured on a fixed probe set of pairs evaluated before and
 * after training with the same unrolled forward, so the reported initial
 * and final losses are comparable and deterministic.
 *
 * Exports are atomic (write temp, rename, re-read to verify) and the
 * manifest records the full hyperparameter set next to a fixture cloud and
 * its encoded feature so the consumer package can cross-validate the
 * weight-file boundary without sharing any code with this package.
 */

import { mkdirSync, renameSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { Rng } from "./rng.js";
import { backward, Tensor } from "./tensor.js";
import {
  EncoderWeights,
  Pooling,
  cloneWeights,
  dimsOf,
  quantizeWeights,
  randomWeights,
  saveWeights,
} from "./weights.js";
import { encodePlain, parametersOf, toTrainable, toWeights } from "./encoder.js";
import { batchLoss, registerPlain } from "./solver.js";
import { applyTransform, compose, inverse, poseError } from "./se3.js";
import { addGaussianNoise, loadCloud, randomBlob, randomTransform } from "./pointcloud.js";

export interface TrainConfig {
  /** Layer widths including the 3-wide input. */
  dims: number[];
  pooling: Pooling;
  /** Fixed unroll depth of the differentiable solver. */
  unrollIters: number;
  epochs: number;
  stepsPerEpoch: number;
  batchSize: number;
  learningRate: number;
  /** Gradient clip on the global norm; 0 disables. */
  clipNorm: number;
  /** Training perturbations: rotation degrees, translation units. */
  rotRange: [number, number];
  transRange: [number, number];
  /** Gaussian noise added to the source cloud (0 for clean training). */
  noiseSd: number;
  /** Finite-difference step of the feature Jacobian. */
  step: number;
  /** Tikhonov shift of the normal-equation solve. */
  ridge: number;
  seed: number;
  /** OFF/XYZ shape files; empty means the built-in blob family. */
  shapePaths: string[];
  /** Built-in shape count when shapePaths is empty. */
  nShapes: number;
  pointsPerShape: number;
}

export const TRAIN_DEFAULTS: TrainConfig = {
  dims: [3, 16, 32],
  pooling: "max",
  unrollIters: 10,
  epochs: 20,
  stepsPerEpoch: 100,
  batchSize: 4,
  learningRate: 0.02,
  clipNorm: 10,
  rotRange: [0, 45],
  transRange: [0, 0.8],
  noiseSd: 0,
  step: 1e-2,
  ridge: 1e-6,
  seed: 0,
  shapePaths: [],
  nShapes: 5,
  pointsPerShape: 64,
};

export function makeConfig(overrides: Partial<TrainConfig> = {}): TrainConfig {
  const config = { ...TRAIN_DEFAULTS, ...overrides };
  if (config.unrollIters < 1) throw new Error(`unrollIters must be at least 1, got ${config.unrollIters}`);
  if (config.epochs < 1) throw new Error(`epochs must be at least 1, got ${config.epochs}`);
  if (config.batchSize < 1) throw new Error(`batchSize must be at least 1, got ${config.batchSize}`);
  if (config.dims.length < 2 || config.dims[0] !== 3) {
    throw new Error(`dims must start at 3 with at least one layer, got ${config.dims.join(",")}`);
  }
  return config;
}

/** Resolve the shape set: files when given, seeded blobs otherwise. */
export function loadShapes(config: TrainConfig): Float64Array[] {
  if (config.shapePaths.length > 0) {
    return config.shapePaths.map((p, i) => loadCloud(p, config.pointsPerShape, config.seed + i));
  }
  if (config.nShapes < 1) throw new Error("shape set must be nonempty");
  const shapes: Float64Array[] = [];
  for (let i = 0; i < config.nShapes; i++) {
    shapes.push(randomBlob(config.pointsPerShape, config.seed * 1000 + i));
  }
  return shapes;
}

export interface Pair {
  template: Float64Array;
  source: Float64Array;
  gGt: Float64Array;
}

/** Draw one training pair from the shape set. */
export function samplePair(shapes: Float64Array[], rng: Rng, config: TrainConfig): Pair {
  const template = shapes[rng.int(shapes.length)];
  const gGt = randomTransform(rng, config.rotRange, config.transRange);
  let source = applyTransform(gGt, template);
  if (config.noiseSd > 0) source = addGaussianNoise(source, config.noiseSd, rng);
  return { template, source, gGt };
}

export interface TrainResult {
  weights: EncoderWeights;
  initWeights: EncoderWeights;
  initialLoss: number;
  finalLoss: number;
  /** Mean training-batch loss per epoch. */
  epochLosses: number[];
  config: TrainConfig;
}

/** Mean unrolled loss over a fixed probe set (no gradients applied). */
export function probeLoss(weights: EncoderWeights, probe: Pair[], config: TrainConfig): number {
  let total = 0;
  for (const pair of probe) {
    const result = registerPlain(weights, pair.template, pair.source, {
      step: config.step,
      ridge: config.ridge,
      maxIters: config.unrollIters,
      stopThreshold: 0, // fixed-depth, like the unrolled forward
    });
    total += frobeniusGap(result.estimate, pair.gGt);
  }
  return total / probe.length;
}

/** ||G_est^-1 G_gt - I||_F, the scalar the training loss minimizes. */
export function frobeniusGap(estimate: Float64Array, gGt: Float64Array): number {
  const diff = compose(inverse(estimate), gGt);
  diff[0] -= 1;
  diff[5] -= 1;
  diff[10] -= 1;
  diff[15] -= 1;
  let acc = 0;
  for (const v of diff) acc += v * v;
  return Math.sqrt(acc);
}

export function train(config: TrainConfig): TrainResult {
  const shapes = loadShapes(config);
  if (shapes.length === 0) throw new Error("shape set must be nonempty");

  const initWeights = randomWeights(config.dims, config.pooling, config.seed);
  const enc = toTrainable(cloneWeights(initWeights));
  const params = parametersOf(enc);

  const probeRng = new Rng(config.seed, 2);
  const probe: Pair[] = [];
  for (let i = 0; i < 16; i++) probe.push(samplePair(shapes, probeRng, config));
  const initialLoss = probeLoss(initWeights, probe, config);

  const rng = new Rng(config.seed, 3);
  const epochLosses: number[] = [];
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    let epochTotal = 0;
    for (let step = 0; step < config.stepsPerEpoch; step++) {
      const batch: Pair[] = [];
      for (let b = 0; b < config.batchSize; b++) batch.push(samplePair(shapes, rng, config));
      let loss: Tensor;
      try {
        loss = batchLoss(enc, batch, {
          step: config.step,
          ridge: config.ridge,
          maxIters: config.unrollIters,
        });
      } catch (error) {
        // Exploded weights surface as a failed normal-equation solve before
        // the loss itself ever reaches NaN; report both the same way.
        if (error instanceof Error && /not positive definite/.test(error.message)) {
          throw new Error(
            `training diverged: the feature solve failed at epoch ${epoch + 1}, step ${step + 1} ` +
              "(weights have likely blown up); lower the learning rate or raise the ridge",
            { cause: error },
          );
        }
        throw error;
      }
      const value = loss.item();
      if (!Number.isFinite(value)) {
        throw new Error(
          `training diverged: loss became ${value} at epoch ${epoch + 1}, step ${step + 1}; ` +
            "lower the learning rate or raise the ridge",
        );
      }
      epochTotal += value;
      backward(loss);
      sgdStep(params, config.learningRate, config.clipNorm);
    }
    epochLosses.push(epochTotal / config.stepsPerEpoch);
  }

  const weights = toWeights(enc);
  const finalLoss = probeLoss(weights, probe, config);
  return { weights, initWeights, initialLoss, finalLoss, epochLosses, config };
}

function sgdStep(params: Tensor[], learningRate: number, clipNorm: number): void {
  let scale = learningRate;
  if (clipNorm > 0) {
    let normSq = 0;
    for (const p of params) {
      if (p.grad === null) continue;
      for (const g of p.grad) normSq += g * g;
    }
    const norm = Math.sqrt(normSq);
    if (norm > clipNorm) scale = (learningRate * clipNorm) / norm;
  }
  for (const p of params) {
    if (p.grad === null) continue;
    for (let i = 0; i < p.data.length; i++) p.data[i] -= scale * p.grad[i];
    p.grad = null;
  }
}

export interface EvalOptions {
  trials: number;
  seed: number;
  rotRange: [number, number];
  transRange: [number, number];
  noiseSd: number;
  maxIters: number;
  /** Success gate, degrees (default 5). */
  rotThreshold?: number;
  /** Success gate, distance (default 0.01). */
  transThreshold?: number;
}

/** Success ratio (pose error under the gate) over held-out pairs. */
export function evaluateSuccess(
  weights: EncoderWeights,
  shapes: Float64Array[],
  options: EvalOptions,
): number {
  const rotThreshold = options.rotThreshold ?? 5;
  const transThreshold = options.transThreshold ?? 0.01;
  const rng = new Rng(options.seed, 4);
  let successes = 0;
  for (let t = 0; t < options.trials; t++) {
    const template = shapes[rng.int(shapes.length)];
    const gGt = randomTransform(rng, options.rotRange, options.transRange);
    let source = applyTransform(gGt, template);
    if (options.noiseSd > 0) source = addGaussianNoise(source, options.noiseSd, rng);
    const result = registerPlain(weights, template, source, { maxIters: options.maxIters });
    const [rotErr, transErr] = poseError(result.estimate, gGt);
    if (rotErr < rotThreshold && transErr < transThreshold) successes++;
  }
  return successes / options.trials;
}

/** Round to 9 significant digits (the manifest's cross-language precision). */
export function round9(x: number): number {
  return x === 0 ? 0 : Number(x.toPrecision(9));
}

export interface FixtureEntry {
  name: string;
  weightsFile: string;
  pooling: Pooling;
  dims: number[];
  /** Fixture cloud, rows of [x, y, z], 9 significant digits. */
  cloud: number[][];
  /** Encoded feature of the cloud under the exported weights, 9 digits. */
  feature: number[];
  training: {
    seed: number;
    epochs: number;
    stepsPerEpoch: number;
    batchSize: number;
    learningRate: number;
    clipNorm: number;
    optimizer: string;
    unrollIters: number;
    step: number;
    ridge: number;
    rotRange: [number, number];
    transRange: [number, number];
    noiseSd: number;
    initialLoss: number;
    finalLoss: number;
  };
}

/**
 * Build a manifest entry for exported weights: quantize to the file's
 * float32, round the fixture cloud to 9 significant digits, and encode that
 * exact rounded cloud so the recorded feature is reproducible bit-for-bit
 * modulo summation order by any reader of the weight file.
 */
export function exportFixture(
  name: string,
  weightsFile: string,
  result: TrainResult,
  fixtureCloud: Float64Array,
): FixtureEntry {
  const quantized = quantizeWeights(result.weights);
  const n = fixtureCloud.length / 3;
  const cloud: number[][] = [];
  const rounded = new Float64Array(fixtureCloud.length);
  for (let i = 0; i < fixtureCloud.length; i++) rounded[i] = round9(fixtureCloud[i]);
  for (let i = 0; i < n; i++) {
    cloud.push([rounded[i * 3], rounded[i * 3 + 1], rounded[i * 3 + 2]]);
  }
  const feature = Array.from(encodePlain(quantized, rounded), round9);
  const c = result.config;
  return {
    name,
    weightsFile,
    pooling: c.pooling,
    dims: dimsOf(result.weights),
    cloud,
    feature,
    training: {
      seed: c.seed,
      epochs: c.epochs,
      stepsPerEpoch: c.stepsPerEpoch,
      batchSize: c.batchSize,
      learningRate: c.learningRate,
      clipNorm: c.clipNorm,
      optimizer: "sgd",
      unrollIters: c.unrollIters,
      step: c.step,
      ridge: c.ridge,
      rotRange: c.rotRange,
      transRange: c.transRange,
      noiseSd: c.noiseSd,
      initialLoss: round9(result.initialLoss),
      finalLoss: round9(result.finalLoss),
    },
  };
}

/** Atomically write the JSON manifest next to the weight files. */
export function saveManifest(path: string, entries: FixtureEntry[]): void {
  mkdirSync(dirname(path), { recursive: true });
  const tmp = `${path}.tmp-${process.pid}`;
  writeFileSync(tmp, JSON.stringify({ entries }, null, 2) + "\n");
  renameSync(tmp, path);
}

/** Train once and export weights + manifest entry into a directory. */
export function trainAndExport(
  name: string,
  outDir: string,
  config: TrainConfig,
): { entry: FixtureEntry; result: TrainResult } {
  const result = train(config);
  mkdirSync(outDir, { recursive: true });
  const weightsFile = `${name}.pnlk`;
  saveWeights(join(outDir, weightsFile), result.weights);
  const fixtureCloud = randomBlob(32, config.seed * 7 + 5);
  const entry = exportFixture(name, weightsFile, result, fixtureCloud);
  return { entry, result };
}
