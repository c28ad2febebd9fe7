/**
 * Shared test utilities: finite-difference gradient checking against the
 * tape, and small numeric comparators. The check helper owns the pattern
 * every gradient test needs — run backward once, then re-evaluate the
 * (freshly rebuilt) graph at nudged leaf values and compare slopes.
 */

import { expect } from "vitest";
import { Tensor, backward } from "../src/tensor.js";

/** Max absolute difference between two numeric arrays of equal length. */
export function maxAbsDiff(a: ArrayLike<number>, b: ArrayLike<number>): number {
  expect(a.length).toBe(b.length);
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}

export function expectCloseArray(a: ArrayLike<number>, b: ArrayLike<number>, tol: number): void {
  expect(maxAbsDiff(a, b)).toBeLessThanOrEqual(tol);
}

export interface GradCheckOptions {
  /** Central-difference step. */
  h?: number;
  /** |analytic - fd| <= tol * max(1, |fd|) per entry. */
  tol?: number;
  /** Check only this many entries per parameter (all when omitted). */
  sampleEntries?: number;
}

/**
 * Compare the tape gradient of a scalar-valued graph against central finite
 * differences, entry by entry, for every listed parameter. `build` must
 * construct the graph from the parameters' current `.data` each time it is
 * called; parameter data is mutated in place and restored.
 */
export function checkGradients(
  build: () => Tensor,
  params: Tensor[],
  { h = 1e-6, tol = 1e-6, sampleEntries }: GradCheckOptions = {},
): void {
  for (const p of params) p.grad = null;
  const loss = build();
  backward(loss);
  const analytic = params.map((p) => Float64Array.from(p.grad ?? new Float64Array(p.size)));

  for (let pi = 0; pi < params.length; pi++) {
    const p = params[pi];
    const indices =
      sampleEntries === undefined || sampleEntries >= p.size
        ? Array.from({ length: p.size }, (_, i) => i)
        : Array.from({ length: sampleEntries }, (_, i) => (i * 7919) % p.size);
    for (const idx of indices) {
      const saved = p.data[idx];
      p.data[idx] = saved + h;
      const up = build().item();
      p.data[idx] = saved - h;
      const down = build().item();
      p.data[idx] = saved;
      const fd = (up - down) / (2 * h);
      const got = analytic[pi][idx];
      expect(
        Math.abs(got - fd),
        `param ${pi} entry ${idx}: analytic ${got} vs fd ${fd}`,
      ).toBeLessThanOrEqual(tol * Math.max(1, Math.abs(fd)));
    }
  }
  for (const p of params) p.grad = null;
}
