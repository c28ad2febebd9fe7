/**
 * Rigid-motion (SE(3)) utilities, in two flavors:
 *
 * - plain Float64Array versions for fast, gradient-free evaluation;
 * - tape versions built from tensor ops, so the training loss can
 *   differentiate through the exponential map and pose composition.
 *
 * Twists are 6-vectors ordered (rotation omega, translation v). The tape
 * exponential map works in s = theta^2 rather than theta itself: the Taylor
 * branch below SMALL_ANGLE is a polynomial in s, so the gradient is finite
 * even at an exactly-zero twist, where d(sqrt)/ds would blow up.
 */

import {
  Tensor,
  add,
  affine,
  assemble,
  constant,
  cosElem,
  divElem,
  dotAll,
  linear,
  matmul,
  mulElem,
  neg,
  scalarMul,
  sinElem,
  sqrtElem,
  addRow,
} from "./tensor.js";

export const SMALL_ANGLE = 1e-4;

const I3 = Object.freeze([1, 0, 0, 0, 1, 0, 0, 0, 1]);
const I4 = Object.freeze([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]);

export function identity4(): Float64Array {
  return Float64Array.from(I4);
}

/** Plain Rodrigues exponential map: twist (6) -> row-major 4x4 transform. */
export function expMap(xi: ArrayLike<number>): Float64Array {
  if (xi.length !== 6) throw new Error(`twist must have 6 entries, got ${xi.length}`);
  const [wx, wy, wz, vx, vy, vz] = Array.from(xi);
  const s = wx * wx + wy * wy + wz * wz;
  const theta = Math.sqrt(s);
  let a: number;
  let b: number;
  let c: number;
  if (theta < SMALL_ANGLE) {
    const s2 = s * s;
    a = 1 - s / 6 + s2 / 120;
    b = 0.5 - s / 24 + s2 / 720;
    c = 1 / 6 - s / 120 + s2 / 5040;
  } else {
    a = Math.sin(theta) / theta;
    b = (1 - Math.cos(theta)) / s;
    c = (1 - a) / s;
  }
  // W = skew(w), W2 = W @ W, both unrolled.
  const w01 = -wz, w02 = wy, w10 = wz, w12 = -wx, w20 = -wy, w21 = wx;
  const q00 = -(wy * wy + wz * wz), q11 = -(wx * wx + wz * wz), q22 = -(wx * wx + wy * wy);
  const q01 = wx * wy, q02 = wx * wz, q12 = wy * wz;

  const g = identity4();
  g[0] = 1 + b * q00;
  g[1] = a * w01 + b * q01;
  g[2] = a * w02 + b * q02;
  g[4] = a * w10 + b * q01;
  g[5] = 1 + b * q11;
  g[6] = a * w12 + b * q12;
  g[8] = a * w20 + b * q02;
  g[9] = a * w21 + b * q12;
  g[10] = 1 + b * q22;
  // translation = V @ v with V = I + b W + c W2
  const v00 = 1 + c * q00, v11 = 1 + c * q11, v22 = 1 + c * q22;
  const v01 = b * w01 + c * q01, v10 = b * w10 + c * q01;
  const v02 = b * w02 + c * q02, v20 = b * w20 + c * q02;
  const v12 = b * w12 + c * q12, v21 = b * w21 + c * q12;
  g[3] = v00 * vx + v01 * vy + v02 * vz;
  g[7] = v10 * vx + v11 * vy + v12 * vz;
  g[11] = v20 * vx + v21 * vy + v22 * vz;
  return g;
}

/** Plain 4x4 x 4x4 composition a . b (row-major). */
export function compose(a: Float64Array, b: Float64Array): Float64Array {
  const out = new Float64Array(16);
  for (let i = 0; i < 4; i++) {
    for (let k = 0; k < 4; k++) {
      const av = a[i * 4 + k];
      if (av === 0) continue;
      for (let j = 0; j < 4; j++) out[i * 4 + j] += av * b[k * 4 + j];
    }
  }
  return out;
}

/** Plain rigid inverse: [R t]^-1 = [R^T, -R^T t]. */
export function inverse(g: Float64Array): Float64Array {
  const out = identity4();
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) out[i * 4 + j] = g[j * 4 + i];
  }
  for (let i = 0; i < 3; i++) {
    out[i * 4 + 3] = -(out[i * 4] * g[3] + out[i * 4 + 1] * g[7] + out[i * 4 + 2] * g[11]);
  }
  return out;
}

/** Pure translation transform. */
export function translation(t: ArrayLike<number>): Float64Array {
  const g = identity4();
  g[3] = t[0];
  g[7] = t[1];
  g[11] = t[2];
  return g;
}

/** Apply a 4x4 transform to an N x 3 cloud stored flat row-major. */
export function applyTransform(g: Float64Array, cloud: Float64Array): Float64Array {
  const n = cloud.length / 3;
  const out = new Float64Array(cloud.length);
  for (let i = 0; i < n; i++) {
    const x = cloud[i * 3];
    const y = cloud[i * 3 + 1];
    const z = cloud[i * 3 + 2];
    out[i * 3] = g[0] * x + g[1] * y + g[2] * z + g[3];
    out[i * 3 + 1] = g[4] * x + g[5] * y + g[6] * z + g[7];
    out[i * 3 + 2] = g[8] * x + g[9] * y + g[10] * z + g[11];
  }
  return out;
}

/** (rotation error in degrees, translation error) between two transforms. */
export function poseError(estimate: Float64Array, truth: Float64Array): [number, number] {
  // trace(R_est^T @ R_true)
  let trace = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) trace += estimate[j * 4 + i] * truth[j * 4 + i];
  }
  const cosTheta = Math.min(1, Math.max(-1, (trace - 1) / 2));
  const rotErrDeg = (Math.acos(cosTheta) * 180) / Math.PI;
  const dx = estimate[3] - truth[3];
  const dy = estimate[7] - truth[7];
  const dz = estimate[11] - truth[11];
  return [rotErrDeg, Math.hypot(dx, dy, dz)];
}

/** Rotation about a unit axis by an angle (radians), as a 4x4 transform. */
export function axisAngle(axis: ArrayLike<number>, angle: number): Float64Array {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  return expMap([
    (axis[0] / n) * angle,
    (axis[1] / n) * angle,
    (axis[2] / n) * angle,
    0,
    0,
    0,
  ]);
}

// ---------------------------------------------------------------------------
// Tape (differentiable) versions
// ---------------------------------------------------------------------------

/** skew(omega) as a 3x3 tensor, omega given as a 6x1 twist's first block. */
function skewFromTwist(xi: Tensor): Tensor {
  return assemble(3, 3, [
    { dst: 1, src: xi, srcIdx: 2, coeff: -1 },
    { dst: 2, src: xi, srcIdx: 1, coeff: 1 },
    { dst: 3, src: xi, srcIdx: 2, coeff: 1 },
    { dst: 5, src: xi, srcIdx: 0, coeff: -1 },
    { dst: 6, src: xi, srcIdx: 1, coeff: -1 },
    { dst: 7, src: xi, srcIdx: 0, coeff: 1 },
  ]);
}

/**
 * Differentiable exponential map: twist tensor (6x1) -> transform (4x4).
 * Mirrors expMap exactly in value; the trig coefficients are expressed in
 * s = |omega|^2 so both branches differentiate cleanly.
 */
export function expMapT(xi: Tensor): Tensor {
  if (xi.rows !== 6 || xi.cols !== 1) {
    throw new Error(`expMapT: twist must be 6x1, got ${xi.rows}x${xi.cols}`);
  }
  const omega = assemble(3, 1, [
    { dst: 0, src: xi, srcIdx: 0, coeff: 1 },
    { dst: 1, src: xi, srcIdx: 1, coeff: 1 },
    { dst: 2, src: xi, srcIdx: 2, coeff: 1 },
  ]);
  const vee = assemble(3, 1, [
    { dst: 0, src: xi, srcIdx: 3, coeff: 1 },
    { dst: 1, src: xi, srcIdx: 4, coeff: 1 },
    { dst: 2, src: xi, srcIdx: 5, coeff: 1 },
  ]);
  const s = dotAll(omega, omega);

  let a: Tensor;
  let b: Tensor;
  let c: Tensor;
  if (s.item() < SMALL_ANGLE * SMALL_ANGLE) {
    const s2 = mulElem(s, s);
    a = add(affine(s, -1 / 6, 1), affine(s2, 1 / 120, 0));
    b = add(affine(s, -1 / 24, 0.5), affine(s2, 1 / 720, 0));
    c = add(affine(s, -1 / 120, 1 / 6), affine(s2, 1 / 5040, 0));
  } else {
    const theta = sqrtElem(s);
    a = divElem(sinElem(theta), theta);
    b = divElem(affine(cosElem(theta), -1, 1), s);
    c = divElem(affine(a, -1, 1), s);
  }

  const w = skewFromTwist(xi);
  const w2 = matmul(w, w);
  const eye = constant(3, 3, I3);
  const rot = add(eye, add(scalarMul(a, w), scalarMul(b, w2)));
  const leftJac = add(eye, add(scalarMul(b, w), scalarMul(c, w2)));
  const trans = matmul(leftJac, vee);

  const terms: { dst: number; src: Tensor; srcIdx: number; coeff: number }[] = [];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      terms.push({ dst: i * 4 + j, src: rot, srcIdx: i * 3 + j, coeff: 1 });
    }
    terms.push({ dst: i * 4 + 3, src: trans, srcIdx: i, coeff: 1 });
  }
  return assemble(4, 4, terms, [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
}

/** Differentiable composition of 4x4 transforms. */
export function composeT(a: Tensor, b: Tensor): Tensor {
  return matmul(a, b);
}

/** Differentiable rigid inverse of a 4x4 transform tensor. */
export function inverseT(g: Tensor): Tensor {
  const rotT = assemble(3, 3, [0, 1, 2].flatMap((i) =>
    [0, 1, 2].map((j) => ({ dst: i * 3 + j, src: g, srcIdx: j * 4 + i, coeff: 1 })),
  ));
  const t = assemble(3, 1, [
    { dst: 0, src: g, srcIdx: 3, coeff: 1 },
    { dst: 1, src: g, srcIdx: 7, coeff: 1 },
    { dst: 2, src: g, srcIdx: 11, coeff: 1 },
  ]);
  const tInv = neg(matmul(rotT, t));
  const terms: { dst: number; src: Tensor; srcIdx: number; coeff: number }[] = [];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      terms.push({ dst: i * 4 + j, src: rotT, srcIdx: i * 3 + j, coeff: 1 });
    }
    terms.push({ dst: i * 4 + 3, src: tInv, srcIdx: i, coeff: 1 });
  }
  return assemble(4, 4, terms, [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
}

/**
 * Differentiable warp of a constant N x 3 cloud by a transform tensor:
 * out = cloud @ R^T + t, gradients flowing into the transform only.
 */
export function applyTransformT(g: Tensor, cloud: Tensor): Tensor {
  const rot = assemble(3, 3, [0, 1, 2].flatMap((i) =>
    [0, 1, 2].map((j) => ({ dst: i * 3 + j, src: g, srcIdx: i * 4 + j, coeff: 1 })),
  ));
  const tRow = assemble(1, 3, [
    { dst: 0, src: g, srcIdx: 3, coeff: 1 },
    { dst: 1, src: g, srcIdx: 7, coeff: 1 },
    { dst: 2, src: g, srcIdx: 11, coeff: 1 },
  ]);
  return addRow(linear(cloud, rot), tRow);
}
