/**
 * Feature-space inverse-compositional registration, twice:
 *
 * - registerPlain: gradient-free, for validation runs. Mirrors the consumer
 *   package's solver — the feature Jacobian is built once on the template by
 *   finite differences (column i along exp(-step * e_i)), each iteration
 *   solves a 6-dof least-squares step against the feature residual, warps
 *   the source, and the accumulated centered-frame motion is inverted back
 *   into a template-to-source estimate.
 *
 * - unrolledLoss: the same computation built on the autodiff tape with a
 *   fixed iteration count and a ridge-regularized normal-equation solve, so
 *   the pose loss ||G_est^-1 G_gt - I||_F differentiates end to end through
 *   the encoder evaluations, the Jacobian, the solve, the exponential map,
 *   and the composition chain.
 *
 * The ridge solve replaces the consumer's SVD pseudo-inverse: at training
 * time the solve must be differentiable and must not explode on the nearly
 * rank-deficient Jacobians random encoders produce, and a fixed Tikhonov
 * shift does both, at the cost of an O(ridge/sigma^2) bias the consumer's
 * solver does not have.
 */

import {
  Tensor,
  add,
  addDiagConst,
  affine,
  assemble,
  constant,
  dotAll,
  matmul,
  scalar,
  solveSPD,
  sqrtElem,
  sub,
  transpose,
} from "./tensor.js";
import { EncoderWeights } from "./weights.js";
import { TrainableEncoder, cloudTensor, encodePlain, encodeT } from "./encoder.js";
import {
  applyTransform,
  applyTransformT,
  compose,
  composeT,
  expMap,
  expMapT,
  identity4,
  inverse,
  inverseT,
  translation,
} from "./se3.js";
import { subtractMean } from "./pointcloud.js";
import { choleskyFactor, choleskySolveVec } from "./tensor.js";

export interface SolveOptions {
  /** Finite-difference perturbation per twist coordinate. */
  step?: number;
  /** Iteration cap (plain) or fixed unroll depth (tape). */
  maxIters?: number;
  /** Plain solver: stop once every |twist entry| falls below this. */
  stopThreshold?: number;
  /** Tikhonov shift on J^T J. */
  ridge?: number;
  /** Center both clouds before solving. */
  subtractMeans?: boolean;
}

const DEFAULTS: Required<SolveOptions> = {
  step: 1e-2,
  maxIters: 10,
  stopThreshold: 1e-7,
  ridge: 1e-6,
  subtractMeans: true,
};

export interface PlainResult {
  estimate: Float64Array;
  iterationsUsed: number;
  converged: boolean;
  residualNorm: number;
}

/** The six constant template warps used for the finite-difference Jacobian. */
function jacobianWarps(templateCentered: Float64Array, step: number): Float64Array[] {
  const warps: Float64Array[] = [];
  for (let i = 0; i < 6; i++) {
    const twist = [0, 0, 0, 0, 0, 0];
    twist[i] = -step;
    warps.push(applyTransform(expMap(twist), templateCentered));
  }
  return warps;
}

/** Gradient-free registration with the trainer's ridge solve. */
export function registerPlain(
  weights: EncoderWeights,
  template: Float64Array,
  source: Float64Array,
  options: SolveOptions = {},
): PlainResult {
  const opts = { ...DEFAULTS, ...options };
  const [tmplCentered, meanTmpl] = opts.subtractMeans
    ? subtractMean(template)
    : [template, [0, 0, 0] as [number, number, number]];
  const [srcCentered, meanSrc] = opts.subtractMeans
    ? subtractMean(source)
    : [source, [0, 0, 0] as [number, number, number]];

  const fTmpl = encodePlain(weights, tmplCentered);
  const k = fTmpl.length;
  const jac = new Float64Array(k * 6);
  const warps = jacobianWarps(tmplCentered, opts.step);
  for (let i = 0; i < 6; i++) {
    const f = encodePlain(weights, warps[i]);
    for (let r = 0; r < k; r++) jac[r * 6 + i] = (f[r] - fTmpl[r]) / opts.step;
  }
  // A = J^T J + ridge I, factored once like the consumer's pseudo-inverse.
  const a = new Float64Array(36);
  for (let i = 0; i < 6; i++) {
    for (let j = 0; j < 6; j++) {
      let acc = i === j ? opts.ridge : 0;
      for (let r = 0; r < k; r++) acc += jac[r * 6 + i] * jac[r * 6 + j];
      a[i * 6 + j] = acc;
    }
  }
  const factor = choleskyFactor(a, 6);

  let current = srcCentered;
  let accum = identity4();
  let fSrc = encodePlain(weights, current);
  let iterations = 0;
  let converged = false;
  for (let it = 0; it < opts.maxIters; it++) {
    const b = new Float64Array(6);
    for (let i = 0; i < 6; i++) {
      let acc = 0;
      for (let r = 0; r < k; r++) acc += jac[r * 6 + i] * (fSrc[r] - fTmpl[r]);
      b[i] = acc;
    }
    const twist = choleskySolveVec(factor, 6, b);
    const delta = expMap(twist);
    current = applyTransform(delta, current);
    accum = compose(delta, accum);
    fSrc = encodePlain(weights, current);
    iterations++;
    let maxAbs = 0;
    for (const t of twist) maxAbs = Math.max(maxAbs, Math.abs(t));
    if (maxAbs < opts.stopThreshold) {
      converged = true;
      break;
    }
  }

  let residual = 0;
  for (let r = 0; r < k; r++) residual += (fSrc[r] - fTmpl[r]) ** 2;
  const estimate = compose(translation(meanSrc), compose(inverse(accum), translation([-meanTmpl[0], -meanTmpl[1], -meanTmpl[2]])));
  return { estimate, iterationsUsed: iterations, converged, residualNorm: Math.sqrt(residual) };
}

export interface UnrolledOptions extends SolveOptions {
  /** Pool only these template points (visible-subset training). */
  templateMask?: ArrayLike<boolean> | null;
  /** Pool only these source points. */
  sourceMask?: ArrayLike<boolean> | null;
}

/**
 * Differentiable unrolled registration; returns the scalar pose loss
 * ||G_est^-1 G_gt - I||_F as a tape node, plus the estimate tensor.
 */
export function unrolledLoss(
  enc: TrainableEncoder,
  template: Float64Array,
  source: Float64Array,
  gGt: Float64Array,
  options: UnrolledOptions = {},
): { loss: Tensor; estimate: Tensor } {
  const opts = { ...DEFAULTS, templateMask: null, sourceMask: null, ...options };
  const [tmplCentered, meanTmpl] = opts.subtractMeans
    ? subtractMean(template)
    : [template, [0, 0, 0] as [number, number, number]];
  const [srcCentered, meanSrc] = opts.subtractMeans
    ? subtractMean(source)
    : [source, [0, 0, 0] as [number, number, number]];

  const tMask = opts.templateMask ?? null;
  const sMask = opts.sourceMask ?? null;

  const fTmpl = encodeT(enc, cloudTensor(tmplCentered), tMask);
  const k = fTmpl.cols;

  // Finite-difference Jacobian: the warped templates are constants, so the
  // gradient flows through the encoder evaluations only.
  const warps = jacobianWarps(tmplCentered, opts.step);
  const terms: { dst: number; src: Tensor; srcIdx: number; coeff: number }[] = [];
  for (let i = 0; i < 6; i++) {
    const diff = sub(encodeT(enc, cloudTensor(warps[i]), tMask), fTmpl);
    for (let r = 0; r < k; r++) {
      terms.push({ dst: r * 6 + i, src: diff, srcIdx: r, coeff: 1 / opts.step });
    }
  }
  const J = assemble(k, 6, terms);
  const Jt = transpose(J);
  const A = addDiagConst(matmul(Jt, J), opts.ridge);

  let current: Tensor = cloudTensor(srcCentered);
  let accum: Tensor = constant(4, 4, identity4());
  for (let it = 0; it < opts.maxIters; it++) {
    const fSrc = encodeT(enc, current, sMask);
    const residual = transpose(sub(fSrc, fTmpl)); // K x 1
    const twist = solveSPD(A, matmul(Jt, residual));
    const delta = expMapT(twist);
    current = applyTransformT(delta, current);
    accum = composeT(delta, accum);
  }

  const estimate = matmul(
    constant(4, 4, translation(meanSrc)),
    matmul(inverseT(accum), constant(4, 4, translation([-meanTmpl[0], -meanTmpl[1], -meanTmpl[2]]))),
  );
  const diff = sub(matmul(inverseT(estimate), constant(4, 4, gGt)), constant(4, 4, identity4()));
  // Epsilon keeps the sqrt differentiable at an exact-recovery zero.
  const loss = sqrtElem(add(dotAll(diff, diff), scalar(1e-30)));
  return { loss, estimate };
}

/** Mean unrolled loss over a batch of (template, source, gGt) triples. */
export function batchLoss(
  enc: TrainableEncoder,
  batch: Array<{ template: Float64Array; source: Float64Array; gGt: Float64Array }>,
  options: UnrolledOptions = {},
): Tensor {
  if (batch.length === 0) throw new Error("batchLoss: empty batch");
  let total: Tensor | null = null;
  for (const item of batch) {
    const { loss } = unrolledLoss(enc, item.template, item.source, item.gGt, options);
    total = total === null ? loss : add(total, loss);
  }
  return affine(total as Tensor, 1 / batch.length, 0);
}
