/**
 * Entropy bottleneck: learned factorized prior plus an exact range coder.
 *
 * Training adds uniform noise to the latent and charges the code length
 * -log2 p(y~) under a per-dimension logistic density; at encode time the
 * latent is rounded and entropy-coded with a rANS coder whose 16-bit
 * frequency tables are quantized from the same prior, so the measured
 * bitstream lengths are real and decoding is bit-exact.
 */
import {tf} from './backend';

export const TOTAL_FREQ_BITS = 16;
const TOTAL_FREQ = 1 << TOTAL_FREQ_BITS;
const STATE_LOW = 1 << 16;
const MAX_SUPPORT = 4096;

function sigmoid(z: number): number {
  return 1 / (1 + Math.exp(-z));
}

export interface DimTable {
  kMin: number;
  freqs: Uint32Array;   // per symbol, escape symbol last, sums to 2^16
  cums: Uint32Array;    // exclusive prefix sums, length freqs.length + 1
}

let priorInstances = 0;

/** Per-dimension logistic prior with trainable location and scale. */
export class LogisticPrior {
  readonly mu: tf.Variable;
  readonly sRaw: tf.Variable;

  constructor(readonly dim: number) {
    const uid = priorInstances++;   // tfjs variable names are global
    this.mu = tf.variable(tf.zeros([dim]), true, `prior${uid}_mu`);
    this.sRaw = tf.variable(tf.fill([dim], 1.0), true, `prior${uid}_s_raw`);
  }

  get variables(): tf.Variable[] {
    return [this.mu, this.sRaw];
  }

  scale(): tf.Tensor {
    return tf.add(tf.softplus(this.sRaw), 1e-2);
  }

  /** Expected code length in bits of noisy latents, shape (batch, dim). */
  rateBits(yNoisy: tf.Tensor): tf.Tensor {
    return tf.tidy(() => {
      const s = this.scale();
      const upper = tf.sigmoid(tf.div(tf.sub(tf.add(yNoisy, 0.5), this.mu), s));
      const lower = tf.sigmoid(tf.div(tf.sub(tf.sub(yNoisy, 0.5), this.mu), s));
      const p = tf.maximum(tf.sub(upper, lower), 1e-9);
      return tf.div(tf.neg(tf.sum(tf.log(p), -1)), Math.log(2));
    });
  }

  /** Quantized per-dimension frequency tables for the range coder. */
  buildTables(): DimTable[] {
    const mu = this.mu.dataSync();
    const s = this.scale().dataSync() as Float32Array;
    const tables: DimTable[] = [];
    for (let i = 0; i < this.dim; i++) {
      const width = Math.min(MAX_SUPPORT, Math.max(2, Math.ceil(16 * s[i]) + 2));
      const kMin = Math.floor(mu[i] - width);
      const kMax = Math.ceil(mu[i] + width);
      const nSym = kMax - kMin + 2;   // +1 escape
      const pmf = new Float64Array(nSym);
      let mass = 0;
      for (let k = kMin; k <= kMax; k++) {
        const p = sigmoid((k + 0.5 - mu[i]) / s[i]) - sigmoid((k - 0.5 - mu[i]) / s[i]);
        pmf[k - kMin] = p;
        mass += p;
      }
      pmf[nSym - 1] = Math.max(1e-9, 1 - mass);   // escape carries the tails
      tables.push({kMin, ...quantizePmf(pmf)});
    }
    return tables;
  }
}

function quantizePmf(pmf: Float64Array): {freqs: Uint32Array; cums: Uint32Array} {
  const n = pmf.length;
  let total = 0;
  for (let i = 0; i < n; i++) total += pmf[i];
  const freqs = new Uint32Array(n);
  const remainders: Array<[number, number]> = [];
  let used = 0;
  for (let i = 0; i < n; i++) {
    const ideal = (pmf[i] / total) * (TOTAL_FREQ - n); // reserve 1 per symbol
    const base = Math.floor(ideal);
    freqs[i] = base + 1;
    used += base + 1;
    remainders.push([ideal - base, i]);
  }
  remainders.sort((a, b) => b[0] - a[0] || a[1] - b[1]);
  let leftover = TOTAL_FREQ - used;
  for (let j = 0; leftover > 0; j = (j + 1) % n, leftover--) {
    freqs[remainders[j][1]] += 1;
  }
  const cums = new Uint32Array(n + 1);
  for (let i = 0; i < n; i++) cums[i + 1] = cums[i] + freqs[i];
  if (cums[n] !== TOTAL_FREQ) {
    throw new Error(`frequency table does not sum to 2^16 (${cums[n]})`);
  }
  return {freqs, cums};
}

export interface Bitstream {
  words: Uint16Array;      // rANS renorm words plus the 32-bit final state
  escapes: Int32Array;     // raw values for symbols outside the table support
  bits: number;            // total measured size
}

/** rANS encode of one integer latent vector; symbols are LIFO, so the
 *  encoder walks the vector backwards and the decoder forwards. */
export function encodeLatent(q: Int32Array, tables: DimTable[]): Bitstream {
  if (q.length !== tables.length) {
    throw new Error('latent length does not match the prior dimension');
  }
  const words: number[] = [];
  const escapes: number[] = [];
  let x = STATE_LOW;
  for (let i = q.length - 1; i >= 0; i--) {
    const t = tables[i];
    const nSym = t.freqs.length;
    let sym = q[i] - t.kMin;
    if (sym < 0 || sym >= nSym - 1) {
      escapes.push(q[i]);
      sym = nSym - 1;   // escape
    }
    const f = t.freqs[sym];
    const c = t.cums[sym];
    // renormalize so the post-encode state stays below 2^32
    while (x >= f * 65536) {
      words.push(x & 0xffff);
      x = Math.floor(x / 65536);
    }
    x = Math.floor(x / f) * 65536 + c + (x % f);
  }
  words.push(x & 0xffff);
  words.push(Math.floor(x / 65536) & 0xffff);
  escapes.reverse();   // decoder consumes them in forward symbol order
  const bits = 16 * words.length + 32 * escapes.length;
  return {words: Uint16Array.from(words), escapes: Int32Array.from(escapes), bits};
}

export function decodeLatent(stream: Bitstream, tables: DimTable[]): Int32Array {
  const words = stream.words;
  let wp = words.length - 1;
  let x = words[wp--] * 65536 + words[wp--];
  let ep = 0;
  const out = new Int32Array(tables.length);
  for (let i = 0; i < tables.length; i++) {
    const t = tables[i];
    const slot = x % 65536;
    // binary search the cumulative table
    let lo = 0;
    let hi = t.freqs.length - 1;
    while (lo < hi) {
      const mid = (lo + hi + 1) >> 1;
      if (t.cums[mid] <= slot) lo = mid;
      else hi = mid - 1;
    }
    const sym = lo;
    x = t.freqs[sym] * Math.floor(x / 65536) + slot - t.cums[sym];
    while (x < STATE_LOW && wp >= 0) {
      x = x * 65536 + words[wp--];
    }
    out[i] = sym === t.freqs.length - 1 ? stream.escapes[ep++] : sym + t.kMin;
  }
  return out;
}
