/**
 * Deterministic random number generation.
 *
 * Training runs must be exactly reproducible from a single integer seed, so
 * everything random flows through one splitmix64-seeded xoshiro256++ stream.
 * Sub-streams are derived by hashing the parent seed with stream indices,
 * which keeps sampling, perturbation, and noise draws independent of each
 * other and of consumption order.
 */

const TWO53 = 9007199254740992; // 2^53

/** Derive a child seed from a parent seed and a stream path. */
export function deriveSeed(seed: number, ...stream: number[]): bigint {
  let h = BigInt.asUintN(64, BigInt(Math.trunc(seed)) ^ 0x9e3779b97f4a7c15n);
  for (const part of stream) {
    h = BigInt.asUintN(64, h ^ BigInt.asUintN(64, BigInt(Math.trunc(part)) + 0x632be59bd9b4e019n));
    h = splitmix64(h);
  }
  return splitmix64(h);
}

function splitmix64(state: bigint): bigint {
  let z = BigInt.asUintN(64, state + 0x9e3779b97f4a7c15n);
  z = BigInt.asUintN(64, (z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n);
  z = BigInt.asUintN(64, (z ^ (z >> 27n)) * 0x94d049bb133111ebn);
  return z ^ (z >> 31n);
}

/** xoshiro256++ pseudo-random stream with float, Gaussian, and integer draws. */
export class Rng {
  private s: [bigint, bigint, bigint, bigint];
  private spareGaussian: number | null = null;

  constructor(seed: number, ...stream: number[]) {
    let state = deriveSeed(seed, ...stream);
    const next = () => {
      state = splitmix64(state + 0x9e3779b97f4a7c15n);
      return state;
    };
    this.s = [next(), next(), next(), next()];
  }

  private nextU64(): bigint {
    const [s0, s1, s2, s3] = this.s;
    const result = BigInt.asUintN(64, rotl(BigInt.asUintN(64, s0 + s3), 23n) + s0);
    const t = BigInt.asUintN(64, s1 << 17n);
    let n2 = s2 ^ s0;
    let n3 = s3 ^ s1;
    const n1 = s1 ^ n2;
    const n0 = s0 ^ n3;
    n2 = n2 ^ t;
    n3 = rotl(n3, 45n);
    this.s = [n0, n1, n2, n3];
    return result;
  }

  /** Uniform double in [0, 1). */
  uniform(): number {
    return Number(this.nextU64() >> 11n) / TWO53;
  }

  /** Uniform double in [lo, hi). */
  uniformIn(lo: number, hi: number): number {
    return lo + (hi - lo) * this.uniform();
  }

  /** Integer in [0, n). */
  int(n: number): number {
    return Math.floor(this.uniform() * n);
  }

  /** Standard Gaussian via Box-Muller (polar form). */
  gaussian(): number {
    if (this.spareGaussian !== null) {
      const g = this.spareGaussian;
      this.spareGaussian = null;
      return g;
    }
    let u = 0;
    let v = 0;
    let r = 0;
    do {
      u = 2 * this.uniform() - 1;
      v = 2 * this.uniform() - 1;
      r = u * u + v * v;
    } while (r >= 1 || r === 0);
    const scale = Math.sqrt((-2 * Math.log(r)) / r);
    this.spareGaussian = v * scale;
    return u * scale;
  }

  /** Unit vector uniform on the sphere. */
  unitVector(): [number, number, number] {
    let x = 0;
    let y = 0;
    let z = 0;
    let n = 0;
    do {
      x = this.gaussian();
      y = this.gaussian();
      z = this.gaussian();
      n = Math.hypot(x, y, z);
    } while (n < 1e-12);
    return [x / n, y / n, z / n];
  }
}

function rotl(x: bigint, k: bigint): bigint {
  return BigInt.asUintN(64, (x << k) | (x >> (64n - k)));
}
