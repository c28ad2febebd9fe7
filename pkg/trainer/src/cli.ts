/**
 * Command-line entry point.
 *
 *   node dist/cli.js train    --out-dir out --name trained [flags]
 *   node dist/cli.js fixtures --out-dir fixtures [--quick]
 *
 * `train` runs one training per the flags and exports weights plus a
 * one-entry manifest. `fixtures` produces the cross-validation bundle the
 * consumer package reads: one trained weight file per pooling plus a shared
 * manifest.json with fixture clouds and their encoded features.
 */

import { parseArgs } from "node:util";
import { join } from "node:path";
import { makeConfig, saveManifest, trainAndExport, TrainConfig } from "./train.js";
import { Pooling } from "./weights.js";

function parseRange(text: string, flag: string): [number, number] {
  const parts = text.split(":");
  const lo = Number(parts[0]);
  const hi = Number(parts[1]);
  if (parts.length !== 2 || !Number.isFinite(lo) || !Number.isFinite(hi) || hi < lo) {
    throw new Error(`${flag} must be LO:HI with LO <= HI, got '${text}'`);
  }
  return [lo, hi];
}

function parsePooling(text: string): Pooling {
  if (text !== "max" && text !== "avg") throw new Error(`pooling must be max or avg, got '${text}'`);
  return text;
}

function configFromFlags(values: Record<string, string | boolean | undefined>): TrainConfig {
  const overrides: Partial<TrainConfig> = {};
  if (values.dims !== undefined) overrides.dims = String(values.dims).split(",").map(Number);
  if (values.pooling !== undefined) overrides.pooling = parsePooling(String(values.pooling));
  if (values.unroll !== undefined) overrides.unrollIters = Number(values.unroll);
  if (values.epochs !== undefined) overrides.epochs = Number(values.epochs);
  if (values["steps-per-epoch"] !== undefined) overrides.stepsPerEpoch = Number(values["steps-per-epoch"]);
  if (values.batch !== undefined) overrides.batchSize = Number(values.batch);
  if (values.lr !== undefined) overrides.learningRate = Number(values.lr);
  if (values["rot-range"] !== undefined) overrides.rotRange = parseRange(String(values["rot-range"]), "--rot-range");
  if (values["trans-range"] !== undefined) {
    overrides.transRange = parseRange(String(values["trans-range"]), "--trans-range");
  }
  if (values["noise-sd"] !== undefined) overrides.noiseSd = Number(values["noise-sd"]);
  if (values.step !== undefined) overrides.step = Number(values.step);
  if (values.seed !== undefined) overrides.seed = Number(values.seed);
  if (values.shapes !== undefined) overrides.shapePaths = String(values.shapes).split(",");
  if (values.points !== undefined) overrides.pointsPerShape = Number(values.points);
  return makeConfig(overrides);
}

const TRAIN_FLAGS = {
  dims: { type: "string" },
  pooling: { type: "string" },
  unroll: { type: "string" },
  epochs: { type: "string" },
  "steps-per-epoch": { type: "string" },
  batch: { type: "string" },
  lr: { type: "string" },
  "rot-range": { type: "string" },
  "trans-range": { type: "string" },
  "noise-sd": { type: "string" },
  step: { type: "string" },
  seed: { type: "string" },
  shapes: { type: "string" },
  points: { type: "string" },
} as const;

function runTrain(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      ...TRAIN_FLAGS,
      manifest: { type: "string" },
      name: { type: "string" },
      "out-dir": { type: "string" },
    },
    allowPositionals: false,
  });
  const outDir = String(values["out-dir"] ?? "out");
  const name = String(values.name ?? "trained");
  const config = configFromFlags(values);
  const { entry, result } = trainAndExport(name, outDir, config);
  saveManifest(String(values.manifest ?? join(outDir, "manifest.json")), [entry]);
  process.stdout.write(
    `trained ${name}: probe loss ${result.initialLoss.toFixed(6)} -> ${result.finalLoss.toFixed(6)}\n`,
  );
  process.stdout.write(`weights: ${join(outDir, entry.weightsFile)}\n`);
}

function runFixtures(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      "out-dir": { type: "string" },
      quick: { type: "boolean" },
      seed: { type: "string" },
    },
    allowPositionals: false,
  });
  const outDir = String(values["out-dir"] ?? "fixtures");
  const seed = Number(values.seed ?? 11);
  const epochs = values.quick ? 2 : 8;
  const entries = [];
  for (const pooling of ["max", "avg"] as Pooling[]) {
    const config = makeConfig({ pooling, seed, epochs, stepsPerEpoch: 50 });
    const { entry, result } = trainAndExport(`trained-${pooling}`, outDir, config);
    entries.push(entry);
    process.stdout.write(
      `${pooling}: probe loss ${result.initialLoss.toFixed(6)} -> ${result.finalLoss.toFixed(6)}\n`,
    );
  }
  saveManifest(join(outDir, "manifest.json"), entries);
  process.stdout.write(`manifest: ${join(outDir, "manifest.json")}\n`);
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "train") runTrain(rest);
    else if (command === "fixtures") runFixtures(rest);
    else {
      process.stderr.write("usage: cli.js <train|fixtures> [flags]\n");
      process.exitCode = 2;
    }
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : String(err)}\n`);
    process.exitCode = 1;
  }
}

main();
