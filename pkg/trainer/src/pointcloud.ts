/**
 * Point-cloud IO and synthetic training data.
 *
 * Clouds are flat row-major Float64Arrays (N x 3). The OFF and XYZ readers
 * accept the same grammar as the consumer package — fused OFF headers,
 * polygon fan triangulation, `#` comments and blank lines in XYZ — so a
 * shape set prepared for one side feeds the other unchanged.
 */

import { readFileSync } from "node:fs";
import { Rng } from "./rng.js";
import { applyTransform, expMap } from "./se3.js";

export interface TriangleMesh {
  vertices: Float64Array; // V x 3 row-major
  faces: Int32Array; // F x 3 row-major
}

export class ParseError extends Error {
  constructor(message: string, lineno: number | null = null) {
    super(lineno === null ? message : `line ${lineno}: ${message}`);
    this.name = "ParseError";
  }
}

function* tokenize(text: string): Generator<[string, number]> {
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const body = lines[i].split("#", 1)[0].trim();
    if (!body) continue;
    for (const tok of body.split(/\s+/)) yield [tok, i + 1];
  }
}

/** Parse OFF mesh text; tolerates the header fused with the counts. */
export function parseOff(text: string): TriangleMesh {
  const toks = tokenize(text);
  const pending: Array<[string, number]> = [];
  const take = (what: string): [string, number] => {
    const queued = pending.shift();
    if (queued !== undefined) return queued;
    const { value, done } = toks.next();
    if (done) throw new ParseError(`unexpected end of file while reading ${what}`);
    return value;
  };
  const takeInt = (what: string): number => {
    const [tok, ln] = take(what);
    const v = Number(tok);
    if (!Number.isInteger(v)) throw new ParseError(`expected integer ${what}, got '${tok}'`, ln);
    return v;
  };
  const takeFloat = (what: string): number => {
    const [tok, ln] = take(what);
    const v = Number(tok);
    if (!Number.isFinite(v)) throw new ParseError(`expected number for ${what}, got '${tok}'`, ln);
    return v;
  };

  const [first, lineno] = take("header");
  if (!first.startsWith("OFF")) throw new ParseError("missing OFF header", lineno);
  const rest = first.slice(3);
  if (rest) pending.push([rest, lineno]);

  const nVertices = takeInt("vertex count");
  const nFaces = takeInt("face count");
  takeInt("edge count");

  const vertices = new Float64Array(nVertices * 3);
  for (let i = 0; i < nVertices * 3; i++) vertices[i] = takeFloat(`vertex ${Math.floor(i / 3)}`);

  const tris: number[] = [];
  for (let i = 0; i < nFaces; i++) {
    const k = takeInt(`size of face ${i}`);
    if (k < 3) throw new ParseError(`face ${i} has ${k} vertices; need at least 3`);
    const idx: number[] = [];
    for (let j = 0; j < k; j++) {
      const v = takeInt(`index of face ${i}`);
      if (v < 0 || v >= nVertices) {
        throw new ParseError(`face ${i} references vertex ${v} of ${nVertices}`);
      }
      idx.push(v);
    }
    for (let j = 1; j + 1 < idx.length; j++) tris.push(idx[0], idx[j], idx[j + 1]);
  }
  return { vertices, faces: Int32Array.from(tris) };
}

/** Parse a plain-text cloud: one `x y z` per line, `#` comments allowed. */
export function parseXyz(text: string): Float64Array {
  const rows: number[] = [];
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i++) {
    const body = lines[i].split("#", 1)[0].trim();
    if (!body) continue;
    const parts = body.split(/\s+/);
    if (parts.length !== 3) {
      throw new ParseError(`expected 3 values, got ${parts.length}`, i + 1);
    }
    for (const part of parts) {
      const v = Number(part);
      if (!Number.isFinite(v)) throw new ParseError(`non-numeric coordinate in '${body}'`, i + 1);
      rows.push(v);
    }
  }
  return Float64Array.from(rows);
}

/** Load a cloud from a .off (sample + normalize) or .xyz file. */
export function loadCloud(path: string, nPoints: number, seed: number): Float64Array {
  const text = readFileSync(path, "utf8");
  if (path.toLowerCase().endsWith(".off")) {
    return normalizeUnitBox(sampleSurface(parseOff(text), nPoints, seed));
  }
  const cloud = parseXyz(text);
  if (cloud.length === 0) throw new ParseError(`no points in ${path}`);
  return cloud;
}

/** Area-weighted uniform surface sampling with the square-fold trick. */
export function sampleSurface(mesh: TriangleMesh, nPoints: number, seed: number): Float64Array {
  if (nPoints <= 0) throw new Error("nPoints must be positive");
  const nFaces = mesh.faces.length / 3;
  const areas = new Float64Array(nFaces);
  let total = 0;
  for (let f = 0; f < nFaces; f++) {
    const [ax, ay, az] = vertexOf(mesh, mesh.faces[f * 3]);
    const [bx, by, bz] = vertexOf(mesh, mesh.faces[f * 3 + 1]);
    const [cx, cy, cz] = vertexOf(mesh, mesh.faces[f * 3 + 2]);
    const ux = bx - ax, uy = by - ay, uz = bz - az;
    const vx = cx - ax, vy = cy - ay, vz = cz - az;
    const crx = uy * vz - uz * vy;
    const cry = uz * vx - ux * vz;
    const crz = ux * vy - uy * vx;
    areas[f] = 0.5 * Math.hypot(crx, cry, crz);
    total += areas[f];
  }
  if (nFaces === 0 || total <= 0) throw new Error("mesh has no faces with positive area");

  const cum = new Float64Array(nFaces);
  let acc = 0;
  for (let f = 0; f < nFaces; f++) {
    acc += areas[f];
    cum[f] = acc;
  }

  const rng = new Rng(seed, 0);
  const out = new Float64Array(nPoints * 3);
  for (let i = 0; i < nPoints; i++) {
    const target = rng.uniform() * total;
    let lo = 0;
    let hi = nFaces - 1;
    while (lo < hi) {
      const mid = (lo + hi) >> 1;
      if (cum[mid] < target) lo = mid + 1;
      else hi = mid;
    }
    const f = lo;
    let u = rng.uniform();
    let v = rng.uniform();
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    const [ax, ay, az] = vertexOf(mesh, mesh.faces[f * 3]);
    const [bx, by, bz] = vertexOf(mesh, mesh.faces[f * 3 + 1]);
    const [cx, cy, cz] = vertexOf(mesh, mesh.faces[f * 3 + 2]);
    out[i * 3] = ax + u * (bx - ax) + v * (cx - ax);
    out[i * 3 + 1] = ay + u * (by - ay) + v * (cy - ay);
    out[i * 3 + 2] = az + u * (bz - az) + v * (cz - az);
  }
  return out;
}

function vertexOf(mesh: TriangleMesh, idx: number): [number, number, number] {
  return [mesh.vertices[idx * 3], mesh.vertices[idx * 3 + 1], mesh.vertices[idx * 3 + 2]];
}

/** Uniform-scale the cloud into [0,1]^3, longest axis spanning exactly it. */
export function normalizeUnitBox(cloud: Float64Array): Float64Array {
  const n = cloud.length / 3;
  if (n === 0) throw new Error("cannot normalize an empty cloud");
  const mins = [Infinity, Infinity, Infinity];
  const maxs = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < 3; j++) {
      const v = cloud[i * 3 + j];
      if (v < mins[j]) mins[j] = v;
      if (v > maxs[j]) maxs[j] = v;
    }
  }
  const extent = Math.max(maxs[0] - mins[0], maxs[1] - mins[1], maxs[2] - mins[2]);
  if (extent <= 0) throw new Error("cloud has zero extent; cannot normalize");
  const out = new Float64Array(cloud.length);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < 3; j++) out[i * 3 + j] = (cloud[i * 3 + j] - mins[j]) / extent;
  }
  return out;
}

/** Center a cloud at its mean; returns the centered cloud and the mean. */
export function subtractMean(cloud: Float64Array): [Float64Array, [number, number, number]] {
  const n = cloud.length / 3;
  const mean: [number, number, number] = [0, 0, 0];
  for (let i = 0; i < n; i++) {
    mean[0] += cloud[i * 3];
    mean[1] += cloud[i * 3 + 1];
    mean[2] += cloud[i * 3 + 2];
  }
  mean[0] /= n;
  mean[1] /= n;
  mean[2] /= n;
  const out = new Float64Array(cloud.length);
  for (let i = 0; i < n; i++) {
    out[i * 3] = cloud[i * 3] - mean[0];
    out[i * 3 + 1] = cloud[i * 3 + 1] - mean[1];
    out[i * 3 + 2] = cloud[i * 3 + 2] - mean[2];
  }
  return [out, mean];
}

/**
 * A lumpy asymmetric blob: Gaussian clusters around a few random centers,
 * normalized to the unit box. Used as the built-in toy shape family when no
 * shape files are supplied — asymmetric enough that every rigid degree of
 * freedom is observable in pooled features.
 */
export function randomBlob(nPoints: number, seed: number, nClusters = 5): Float64Array {
  const rng = new Rng(seed, 1);
  const centers = new Float64Array(nClusters * 3);
  for (let i = 0; i < centers.length; i++) centers[i] = rng.uniform();
  const scales = new Float64Array(nClusters);
  for (let i = 0; i < nClusters; i++) scales[i] = 0.05 + 0.2 * rng.uniform();
  const out = new Float64Array(nPoints * 3);
  for (let i = 0; i < nPoints; i++) {
    const k = rng.int(nClusters);
    for (let j = 0; j < 3; j++) {
      out[i * 3 + j] = centers[k * 3 + j] + scales[k] * rng.gaussian();
    }
  }
  return normalizeUnitBox(out);
}

/**
 * Random rigid transform: rotation angle uniform in rotRange (degrees) about
 * a uniform axis, translation magnitude uniform in transRange along a
 * uniform direction.
 */
export function randomTransform(
  rng: Rng,
  rotRange: [number, number],
  transRange: [number, number],
): Float64Array {
  const angle = (rng.uniformIn(rotRange[0], rotRange[1]) * Math.PI) / 180;
  const axis = rng.unitVector();
  const magnitude = rng.uniformIn(transRange[0], transRange[1]);
  const dir = rng.unitVector();
  const g = expMap([axis[0] * angle, axis[1] * angle, axis[2] * angle, 0, 0, 0]);
  g[3] = dir[0] * magnitude;
  g[7] = dir[1] * magnitude;
  g[11] = dir[2] * magnitude;
  return g;
}

/** Add isotropic Gaussian noise to every coordinate. */
export function addGaussianNoise(cloud: Float64Array, sd: number, rng: Rng): Float64Array {
  const out = new Float64Array(cloud.length);
  for (let i = 0; i < cloud.length; i++) out[i] = cloud[i] + sd * rng.gaussian();
  return out;
}

/** Warp a cloud by a transform (re-export of the plain se3 helper). */
export { applyTransform };
