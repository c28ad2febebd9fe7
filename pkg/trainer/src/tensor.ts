/**
 * Reverse-mode automatic differentiation over small dense float64 matrices.
 *
 * Every value is a row-major 2-D Tensor (scalars are 1x1, vectors are n x 1
 * or 1 x n). Ops build an implicit computation graph; backward(loss) does an
 * iterative topological sort from the loss node and accumulates gradients
 * into every reachable tensor that requires them. Parameters are long-lived
 * leaf tensors; everything else is rebuilt per training step and garbage
 * collected with the graph.
 *
 * Float64 throughout is deliberate: the gradient check compares against
 * central finite differences with step 1e-4, and the exported-feature
 * contract with the consumer package is 1e-6 per channel — both would drown
 * in float32 rounding.
 */

export class Tensor {
  readonly rows: number;
  readonly cols: number;
  readonly data: Float64Array;
  grad: Float64Array | null = null;
  readonly requiresGrad: boolean;
  /** Parents in the computation graph (empty for leaves). */
  readonly parents: readonly Tensor[];
  /** Accumulates this node's gradient into its parents; null for leaves. */
  readonly backwardFn: (() => void) | null;

  constructor(
    rows: number,
    cols: number,
    data: Float64Array,
    parents: readonly Tensor[] = [],
    backwardFn: (() => void) | null = null,
  ) {
    if (data.length !== rows * cols) {
      throw new Error(`tensor data length ${data.length} does not match ${rows}x${cols}`);
    }
    this.rows = rows;
    this.cols = cols;
    this.data = data;
    this.parents = parents;
    this.backwardFn = backwardFn;
    this.requiresGrad = backwardFn !== null || parents.some((p) => p.requiresGrad);
  }

  get size(): number {
    return this.rows * this.cols;
  }

  /** The value of a 1x1 tensor. */
  item(): number {
    if (this.size !== 1) {
      throw new Error(`item() needs a 1x1 tensor, got ${this.rows}x${this.cols}`);
    }
    return this.data[0];
  }

  ensureGrad(): Float64Array {
    if (this.grad === null) {
      this.grad = new Float64Array(this.size);
    }
    return this.grad;
  }
}

/** A leaf tensor that does not require gradients. */
export function constant(rows: number, cols: number, values: ArrayLike<number>): Tensor {
  return new Tensor(rows, cols, Float64Array.from(values));
}

export function scalar(value: number): Tensor {
  return constant(1, 1, [value]);
}

/** A trainable leaf: gradients accumulate into it during backward(). */
export function parameter(rows: number, cols: number, values: ArrayLike<number>): Tensor {
  const t = new Tensor(rows, cols, Float64Array.from(values), [], () => undefined);
  return t;
}

function sameShape(a: Tensor, b: Tensor, op: string): void {
  if (a.rows !== b.rows || a.cols !== b.cols) {
    throw new Error(`${op}: shape mismatch ${a.rows}x${a.cols} vs ${b.rows}x${b.cols}`);
  }
}

function unary(a: Tensor, out: Float64Array, rows: number, cols: number, back: (g: Float64Array) => void): Tensor {
  const node: Tensor = new Tensor(rows, cols, out, [a], a.requiresGrad ? () => {
    if (node.grad !== null) back(node.grad);
  } : null);
  return node;
}

export function add(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b, "add");
  const out = new Float64Array(a.size);
  for (let i = 0; i < out.length; i++) out[i] = a.data[i] + b.data[i];
  const node: Tensor = new Tensor(a.rows, a.cols, out, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] += g[i];
    }
  });
  return node;
}

export function sub(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b, "sub");
  const out = new Float64Array(a.size);
  for (let i = 0; i < out.length; i++) out[i] = a.data[i] - b.data[i];
  const node: Tensor = new Tensor(a.rows, a.cols, out, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] -= g[i];
    }
  });
  return node;
}

export function mulElem(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b, "mulElem");
  const out = new Float64Array(a.size);
  for (let i = 0; i < out.length; i++) out[i] = a.data[i] * b.data[i];
  const node: Tensor = new Tensor(a.rows, a.cols, out, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] * b.data[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] += g[i] * a.data[i];
    }
  });
  return node;
}

export function divElem(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b, "divElem");
  const out = new Float64Array(a.size);
  for (let i = 0; i < out.length; i++) out[i] = a.data[i] / b.data[i];
  const node: Tensor = new Tensor(a.rows, a.cols, out, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < g.length; i++) ga[i] += g[i] / b.data[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < g.length; i++) gb[i] -= (g[i] * a.data[i]) / (b.data[i] * b.data[i]);
    }
  });
  return node;
}

/** a*x + b elementwise with plain-number coefficients. */
export function affine(x: Tensor, a: number, b: number): Tensor {
  const out = new Float64Array(x.size);
  for (let i = 0; i < out.length; i++) out[i] = a * x.data[i] + b;
  return unary(x, out, x.rows, x.cols, (g) => {
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[i] += a * g[i];
  });
}

export function neg(x: Tensor): Tensor {
  return affine(x, -1, 0);
}

/** Multiply a whole tensor by a 1x1 tensor. */
export function scalarMul(s: Tensor, m: Tensor): Tensor {
  if (s.size !== 1) throw new Error("scalarMul: first argument must be 1x1");
  const sv = s.data[0];
  const out = new Float64Array(m.size);
  for (let i = 0; i < out.length; i++) out[i] = sv * m.data[i];
  const node: Tensor = new Tensor(m.rows, m.cols, out, [s, m], () => {
    const g = node.grad;
    if (g === null) return;
    if (s.requiresGrad) {
      const gs = s.ensureGrad();
      let acc = 0;
      for (let i = 0; i < g.length; i++) acc += g[i] * m.data[i];
      gs[0] += acc;
    }
    if (m.requiresGrad) {
      const gm = m.ensureGrad();
      for (let i = 0; i < g.length; i++) gm[i] += sv * g[i];
    }
  });
  return node;
}

export function matmul(a: Tensor, b: Tensor): Tensor {
  if (a.cols !== b.rows) {
    throw new Error(`matmul: inner dimensions differ, ${a.rows}x${a.cols} @ ${b.rows}x${b.cols}`);
  }
  const n = a.rows;
  const k = a.cols;
  const m = b.cols;
  const out = new Float64Array(n * m);
  for (let i = 0; i < n; i++) {
    for (let p = 0; p < k; p++) {
      const av = a.data[i * k + p];
      if (av === 0) continue;
      const bRow = p * m;
      const oRow = i * m;
      for (let j = 0; j < m; j++) out[oRow + j] += av * b.data[bRow + j];
    }
  }
  const node: Tensor = new Tensor(n, m, out, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    if (a.requiresGrad) {
      // dA = G @ B^T
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) {
        for (let p = 0; p < k; p++) {
          let acc = 0;
          const gRow = i * m;
          const bRow = p * m;
          for (let j = 0; j < m; j++) acc += g[gRow + j] * b.data[bRow + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (b.requiresGrad) {
      // dB = A^T @ G
      const gb = b.ensureGrad();
      for (let p = 0; p < k; p++) {
        for (let i = 0; i < n; i++) {
          const av = a.data[i * k + p];
          if (av === 0) continue;
          const gRow = i * m;
          const bRow = p * m;
          for (let j = 0; j < m; j++) gb[bRow + j] += av * g[gRow + j];
        }
      }
    }
  });
  return node;
}

export function transpose(a: Tensor): Tensor {
  const out = new Float64Array(a.size);
  for (let i = 0; i < a.rows; i++) {
    for (let j = 0; j < a.cols; j++) out[j * a.rows + i] = a.data[i * a.cols + j];
  }
  return unary(a, out, a.cols, a.rows, (g) => {
    const ga = a.ensureGrad();
    for (let i = 0; i < a.rows; i++) {
      for (let j = 0; j < a.cols; j++) ga[i * a.cols + j] += g[j * a.rows + i];
    }
  });
}

/**
 * Per-point linear layer: x (N x in) with weight w stored (out x in),
 * computing x @ w^T (N x out) without materializing the transpose.
 */
export function linear(x: Tensor, w: Tensor): Tensor {
  if (x.cols !== w.cols) {
    throw new Error(`linear: input has ${x.cols} features but weight takes ${w.cols}`);
  }
  const n = x.rows;
  const inDim = x.cols;
  const outDim = w.rows;
  const out = new Float64Array(n * outDim);
  for (let i = 0; i < n; i++) {
    const xRow = i * inDim;
    const oRow = i * outDim;
    for (let o = 0; o < outDim; o++) {
      let acc = 0;
      const wRow = o * inDim;
      for (let p = 0; p < inDim; p++) acc += x.data[xRow + p] * w.data[wRow + p];
      out[oRow + o] = acc;
    }
  }
  const node: Tensor = new Tensor(n, outDim, out, [x, w], () => {
    const g = node.grad;
    if (g === null) return;
    if (x.requiresGrad) {
      // dX = G @ W
      const gx = x.ensureGrad();
      for (let i = 0; i < n; i++) {
        const gRow = i * outDim;
        const xRow = i * inDim;
        for (let o = 0; o < outDim; o++) {
          const gv = g[gRow + o];
          if (gv === 0) continue;
          const wRow = o * inDim;
          for (let p = 0; p < inDim; p++) gx[xRow + p] += gv * w.data[wRow + p];
        }
      }
    }
    if (w.requiresGrad) {
      // dW = G^T @ X
      const gw = w.ensureGrad();
      for (let i = 0; i < n; i++) {
        const gRow = i * outDim;
        const xRow = i * inDim;
        for (let o = 0; o < outDim; o++) {
          const gv = g[gRow + o];
          if (gv === 0) continue;
          const wRow = o * inDim;
          for (let p = 0; p < inDim; p++) gw[wRow + p] += gv * x.data[xRow + p];
        }
      }
    }
  });
  return node;
}

/** Add a 1 x D row vector to every row of an N x D matrix. */
export function addRow(m: Tensor, row: Tensor): Tensor {
  if (row.rows !== 1 || row.cols !== m.cols) {
    throw new Error(`addRow: row must be 1x${m.cols}, got ${row.rows}x${row.cols}`);
  }
  const out = new Float64Array(m.size);
  const d = m.cols;
  for (let i = 0; i < m.rows; i++) {
    for (let j = 0; j < d; j++) out[i * d + j] = m.data[i * d + j] + row.data[j];
  }
  const node: Tensor = new Tensor(m.rows, m.cols, out, [m, row], () => {
    const g = node.grad;
    if (g === null) return;
    if (m.requiresGrad) {
      const gm = m.ensureGrad();
      for (let i = 0; i < g.length; i++) gm[i] += g[i];
    }
    if (row.requiresGrad) {
      const gr = row.ensureGrad();
      for (let i = 0; i < m.rows; i++) {
        for (let j = 0; j < d; j++) gr[j] += g[i * d + j];
      }
    }
  });
  return node;
}

/** Multiply every row of an N x D matrix by a 1 x D row vector. */
export function mulRow(m: Tensor, row: Tensor): Tensor {
  if (row.rows !== 1 || row.cols !== m.cols) {
    throw new Error(`mulRow: row must be 1x${m.cols}, got ${row.rows}x${row.cols}`);
  }
  const out = new Float64Array(m.size);
  const d = m.cols;
  for (let i = 0; i < m.rows; i++) {
    for (let j = 0; j < d; j++) out[i * d + j] = m.data[i * d + j] * row.data[j];
  }
  const node: Tensor = new Tensor(m.rows, m.cols, out, [m, row], () => {
    const g = node.grad;
    if (g === null) return;
    if (m.requiresGrad) {
      const gm = m.ensureGrad();
      for (let i = 0; i < m.rows; i++) {
        for (let j = 0; j < d; j++) gm[i * d + j] += g[i * d + j] * row.data[j];
      }
    }
    if (row.requiresGrad) {
      const gr = row.ensureGrad();
      for (let i = 0; i < m.rows; i++) {
        for (let j = 0; j < d; j++) gr[j] += g[i * d + j] * m.data[i * d + j];
      }
    }
  });
  return node;
}

export function relu(x: Tensor): Tensor {
  const out = new Float64Array(x.size);
  for (let i = 0; i < out.length; i++) out[i] = x.data[i] > 0 ? x.data[i] : 0;
  return unary(x, out, x.rows, x.cols, (g) => {
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) {
      if (x.data[i] > 0) gx[i] += g[i];
    }
  });
}

/**
 * Column-wise max over rows -> 1 x D. An optional boolean mask excludes rows
 * from the pool entirely: excluded rows can never win a column, so the
 * subgradient (which flows only to winners) never touches them.
 */
export function maxPoolCols(m: Tensor, mask: ArrayLike<boolean> | null = null): Tensor {
  if (mask !== null && mask.length !== m.rows) {
    throw new Error(`maxPoolCols: mask has ${mask.length} entries for ${m.rows} rows`);
  }
  const d = m.cols;
  const out = new Float64Array(d).fill(Number.NEGATIVE_INFINITY);
  const winners = new Int32Array(d).fill(-1);
  for (let i = 0; i < m.rows; i++) {
    if (mask !== null && !mask[i]) continue;
    for (let j = 0; j < d; j++) {
      const v = m.data[i * d + j];
      if (v > out[j]) {
        out[j] = v;
        winners[j] = i;
      }
    }
  }
  if (winners[0] === -1 && (d === 0 || winners.every((w) => w === -1))) {
    throw new Error("maxPoolCols: mask excludes every row; nothing to pool");
  }
  return unary(m, out, 1, d, (g) => {
    const gm = m.ensureGrad();
    for (let j = 0; j < d; j++) gm[winners[j] * d + j] += g[j];
  });
}

/** Column-wise mean over (unmasked) rows -> 1 x D. */
export function avgPoolCols(m: Tensor, mask: ArrayLike<boolean> | null = null): Tensor {
  if (mask !== null && mask.length !== m.rows) {
    throw new Error(`avgPoolCols: mask has ${mask.length} entries for ${m.rows} rows`);
  }
  const d = m.cols;
  let count = 0;
  const out = new Float64Array(d);
  for (let i = 0; i < m.rows; i++) {
    if (mask !== null && !mask[i]) continue;
    count++;
    for (let j = 0; j < d; j++) out[j] += m.data[i * d + j];
  }
  if (count === 0) {
    throw new Error("avgPoolCols: mask excludes every row; nothing to pool");
  }
  for (let j = 0; j < d; j++) out[j] /= count;
  return unary(m, out, 1, d, (g) => {
    const gm = m.ensureGrad();
    for (let i = 0; i < m.rows; i++) {
      if (mask !== null && !mask[i]) continue;
      for (let j = 0; j < d; j++) gm[i * d + j] += g[j] / count;
    }
  });
}

export function sumAll(m: Tensor): Tensor {
  let acc = 0;
  for (let i = 0; i < m.size; i++) acc += m.data[i];
  const out = Float64Array.of(acc);
  return unary(m, out, 1, 1, (g) => {
    const gm = m.ensureGrad();
    for (let i = 0; i < gm.length; i++) gm[i] += g[0];
  });
}

/** Fused sum(a * b) -> 1x1, used for squared norms and inner products. */
export function dotAll(a: Tensor, b: Tensor): Tensor {
  sameShape(a, b, "dotAll");
  let acc = 0;
  for (let i = 0; i < a.size; i++) acc += a.data[i] * b.data[i];
  const node: Tensor = new Tensor(1, 1, Float64Array.of(acc), [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    const gv = g[0];
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < ga.length; i++) ga[i] += gv * b.data[i];
    }
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < gb.length; i++) gb[i] += gv * a.data[i];
    }
  });
  return node;
}

export function sqrtElem(x: Tensor): Tensor {
  const out = new Float64Array(x.size);
  for (let i = 0; i < out.length; i++) out[i] = Math.sqrt(x.data[i]);
  return unary(x, out, x.rows, x.cols, (g) => {
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[i] += g[i] / (2 * out[i]);
  });
}

export function sinElem(x: Tensor): Tensor {
  const out = new Float64Array(x.size);
  for (let i = 0; i < out.length; i++) out[i] = Math.sin(x.data[i]);
  return unary(x, out, x.rows, x.cols, (g) => {
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[i] += g[i] * Math.cos(x.data[i]);
  });
}

export function cosElem(x: Tensor): Tensor {
  const out = new Float64Array(x.size);
  for (let i = 0; i < out.length; i++) out[i] = Math.cos(x.data[i]);
  return unary(x, out, x.rows, x.cols, (g) => {
    const gx = x.ensureGrad();
    for (let i = 0; i < g.length; i++) gx[i] -= g[i] * Math.sin(x.data[i]);
  });
}

export interface AssembleTerm {
  /** Flat index into the output. */
  dst: number;
  src: Tensor;
  /** Flat index into the source. */
  srcIdx: number;
  coeff: number;
}

/**
 * Sparse linear assembly: out[dst] += coeff * src[srcIdx] over the terms,
 * on top of an optional constant base. One op covers all the structural
 * plumbing — building skew matrices, packing rotation/translation blocks
 * into 4x4 transforms, slicing twist coordinates — with exact gradients.
 */
export function assemble(
  rows: number,
  cols: number,
  terms: readonly AssembleTerm[],
  base: ArrayLike<number> | null = null,
): Tensor {
  const out = base !== null ? Float64Array.from(base) : new Float64Array(rows * cols);
  if (out.length !== rows * cols) {
    throw new Error(`assemble: base length ${out.length} does not match ${rows}x${cols}`);
  }
  for (const term of terms) {
    out[term.dst] += term.coeff * term.src.data[term.srcIdx];
  }
  const parents = [...new Set(terms.map((t) => t.src))];
  const node: Tensor = new Tensor(rows, cols, out, parents, () => {
    const g = node.grad;
    if (g === null) return;
    for (const term of terms) {
      if (term.src.requiresGrad) {
        term.src.ensureGrad()[term.srcIdx] += term.coeff * g[term.dst];
      }
    }
  });
  return node;
}

/** Add a constant to the diagonal of a square matrix (ridge shift). */
export function addDiagConst(m: Tensor, c: number): Tensor {
  if (m.rows !== m.cols) throw new Error("addDiagConst: matrix must be square");
  const out = Float64Array.from(m.data);
  for (let i = 0; i < m.rows; i++) out[i * m.cols + i] += c;
  return unary(m, out, m.rows, m.cols, (g) => {
    const gm = m.ensureGrad();
    for (let i = 0; i < g.length; i++) gm[i] += g[i];
  });
}

/** Cholesky factorization of a symmetric positive-definite matrix (plain). */
export function choleskyFactor(a: Float64Array, n: number): Float64Array {
  const l = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j <= i; j++) {
      let acc = a[i * n + j];
      for (let p = 0; p < j; p++) acc -= l[i * n + p] * l[j * n + p];
      if (i === j) {
        if (acc <= 0) {
          throw new Error(`matrix is not positive definite (pivot ${acc} at ${i})`);
        }
        l[i * n + i] = Math.sqrt(acc);
      } else {
        l[i * n + j] = acc / l[j * n + j];
      }
    }
  }
  return l;
}

/** Solve L L^T x = b given the Cholesky factor (plain). */
export function choleskySolveVec(l: Float64Array, n: number, b: Float64Array): Float64Array {
  const y = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    let acc = b[i];
    for (let p = 0; p < i; p++) acc -= l[i * n + p] * y[p];
    y[i] = acc / l[i * n + i];
  }
  const x = new Float64Array(n);
  for (let i = n - 1; i >= 0; i--) {
    let acc = y[i];
    for (let p = i + 1; p < n; p++) acc -= l[p * n + i] * x[p];
    x[i] = acc / l[i * n + i];
  }
  return x;
}

/**
 * Differentiable solve of A x = b for symmetric positive-definite A (n x n)
 * and b (n x 1). The backward pass uses the implicit-function rule with the
 * forward Cholesky factor reused: u = A^{-1} g, db += u, dA -= u x^T.
 */
export function solveSPD(a: Tensor, b: Tensor): Tensor {
  if (a.rows !== a.cols) throw new Error("solveSPD: matrix must be square");
  if (b.rows !== a.rows || b.cols !== 1) {
    throw new Error(`solveSPD: right-hand side must be ${a.rows}x1, got ${b.rows}x${b.cols}`);
  }
  const n = a.rows;
  const l = choleskyFactor(a.data, n);
  const x = choleskySolveVec(l, n, b.data);
  const node: Tensor = new Tensor(n, 1, x, [a, b], () => {
    const g = node.grad;
    if (g === null) return;
    const u = choleskySolveVec(l, n, Float64Array.from(g));
    if (b.requiresGrad) {
      const gb = b.ensureGrad();
      for (let i = 0; i < n; i++) gb[i] += u[i];
    }
    if (a.requiresGrad) {
      const ga = a.ensureGrad();
      for (let i = 0; i < n; i++) {
        for (let j = 0; j < n; j++) ga[i * n + j] -= u[i] * x[j];
      }
    }
  });
  return node;
}

/**
 * Backpropagate from a 1x1 loss through every reachable ancestor.
 *
 * Iterative post-order topological sort (white/gray/black three-state DFS),
 * then a reverse sweep. A node must turn black — all of its ancestors
 * finished — before it enters the order; marking nodes at push time instead
 * would let a tensor consumed along two paths run its backward before the
 * second path had contributed its gradient.
 */
export function backward(loss: Tensor): void {
  if (loss.size !== 1) {
    throw new Error(`backward() needs a 1x1 loss tensor, got ${loss.rows}x${loss.cols}`);
  }
  const order: Tensor[] = [];
  const GRAY = 1;
  const BLACK = 2;
  const state = new Map<Tensor, number>();
  const stack: Tensor[] = [loss];
  while (stack.length > 0) {
    const node = stack[stack.length - 1];
    const s = state.get(node);
    if (s === undefined) {
      state.set(node, GRAY);
      for (const parent of node.parents) {
        if (parent.requiresGrad && !state.has(parent)) stack.push(parent);
      }
    } else {
      stack.pop();
      if (s === GRAY) {
        state.set(node, BLACK);
        order.push(node);
      }
    }
  }
  loss.ensureGrad()[0] = 1;
  for (let i = order.length - 1; i >= 0; i--) {
    const node = order[i];
    if (node.backwardFn !== null && node.grad !== null) node.backwardFn();
  }
}
