/**
 * Channel dataset reader and beamforming-vector extraction.
 *
 * The container layout is fixed: an 18-byte big-endian header
 * (magic "CHNS", u16 version, u32 n_sc, u32 n_t, u32 n_samples) followed by
 * per-sample interleaved real/imag float32 pairs, subcarrier-major. The JSON
 * sidecar `<file>.json` carries the channel config and per-sample
 * LOS/room labels.
 */
import * as fs from 'fs';

export interface DatasetHeader {
  nSc: number;
  nT: number;
  nSamples: number;
}

export interface CsiDataset {
  /** stacked real/imag planes, sample-major: [n, 2, nVs, nT] */
  tensors: Float32Array;
  los: boolean[];
  roomIds: number[];
  n: number;
  nVs: number;
  nT: number;
  nSc: number;
  nG: number;
}

const HEADER_BYTES = 18;
const MAGIC = 'CHNS';

export function readHeader(path: string): DatasetHeader {
  const fd = fs.openSync(path, 'r');
  const head = Buffer.alloc(HEADER_BYTES);
  fs.readSync(fd, head, 0, HEADER_BYTES, 0);
  fs.closeSync(fd);
  if (head.toString('latin1', 0, 4) !== MAGIC) {
    throw new Error(`not a channel container: ${path}`);
  }
  const version = head.readUInt16BE(4);
  if (version !== 1) {
    throw new Error(`unsupported container version ${version}`);
  }
  return {nSc: head.readUInt32BE(6), nT: head.readUInt32BE(10), nSamples: head.readUInt32BE(14)};
}

/**
 * Load a dataset, sampling the first subcarrier of every group of nG and
 * converting each 1 x nT channel row into its unit beamforming vector
 * (conjugate direction, phase-normalized so the first element is real
 * non-negative), stacked into real/imag planes.
 */
export function loadDataset(path: string, nG = 16, limit?: number): CsiDataset {
  const header = readHeader(path);
  const sidecar = JSON.parse(fs.readFileSync(path + '.json', 'utf8'));
  const {nSc, nT} = header;
  const n = limit === undefined ? header.nSamples : Math.min(limit, header.nSamples);
  const nVs = Math.ceil(nSc / nG);
  const bytesPerSample = nSc * nT * 8;

  const fd = fs.openSync(path, 'r');
  const buf = Buffer.alloc(bytesPerSample);
  const tensors = new Float32Array(n * 2 * nVs * nT);
  const los: boolean[] = [];
  const roomIds: number[] = [];
  const re = new Float64Array(nT);
  const im = new Float64Array(nT);

  for (let s = 0; s < n; s++) {
    fs.readSync(fd, buf, 0, bytesPerSample, HEADER_BYTES + s * bytesPerSample);
    for (let g = 0; g < nVs; g++) {
      const k = g * nG;
      let norm2 = 0;
      for (let t = 0; t < nT; t++) {
        const off = (k * nT + t) * 8;
        const hr = buf.readFloatBE(off);
        const hi = buf.readFloatBE(off + 4);
        re[t] = hr;
        im[t] = -hi; // conjugate
        norm2 += hr * hr + hi * hi;
      }
      if (norm2 === 0) {
        throw new Error(`all-zero channel row in sample ${s}, subcarrier ${k}`);
      }
      const norm = Math.sqrt(norm2);
      // rotate so the first element is real non-negative
      const pr = re[0] / norm;
      const pi = im[0] / norm;
      const pm = Math.hypot(pr, pi);
      const cr = pm > 0 ? pr / pm : 1;
      const ci = pm > 0 ? -pi / pm : 0;
      for (let t = 0; t < nT; t++) {
        const vr = re[t] / norm;
        const vi = im[t] / norm;
        tensors[((s * 2 + 0) * nVs + g) * nT + t] = vr * cr - vi * ci;
        tensors[((s * 2 + 1) * nVs + g) * nT + t] = vr * ci + vi * cr;
      }
    }
    los.push(Boolean(sidecar.samples[s].los));
    roomIds.push(Number(sidecar.samples[s].room_id ?? -1));
  }
  fs.closeSync(fd);
  return {tensors, los, roomIds, n, nVs, nT, nSc, nG};
}

/** Deterministic shuffled index split (LCG keeps it dependency-free). */
export function splitIndices(n: number, testFraction: number, seed = 1
                             ): {train: number[]; test: number[]} {
  const idx = Array.from({length: n}, (_, i) => i);
  let state = seed >>> 0;
  for (let i = n - 1; i > 0; i--) {
    state = (1664525 * state + 1013904223) >>> 0;
    const j = state % (i + 1);
    [idx[i], idx[j]] = [idx[j], idx[i]];
  }
  const nTest = Math.max(1, Math.round(n * testFraction));
  return {test: idx.slice(0, nTest), train: idx.slice(nTest)};
}

/** Gather samples into a contiguous [m, 2, nVs, nT] buffer. */
export function gather(ds: CsiDataset, indices: number[]): Float32Array {
  const per = 2 * ds.nVs * ds.nT;
  const out = new Float32Array(indices.length * per);
  indices.forEach((src, i) => {
    out.set(ds.tensors.subarray(src * per, (src + 1) * per), i * per);
  });
  return out;
}

/**
 * Mean cosine correlation between an original and a reconstructed sample
 * over all data subcarriers; each sampled vector covers its group of nG
 * subcarriers (the last group may be shorter).
 */
export function sampleCorrelation(a: Float32Array, b: Float32Array,
                                  nVs: number, nT: number, nSc: number, nG: number): number {
  let acc = 0;
  for (let g = 0; g < nVs; g++) {
    let rr = 0;
    let ri = 0;
    for (let t = 0; t < nT; t++) {
      const ar = a[(0 * nVs + g) * nT + t];
      const ai = a[(1 * nVs + g) * nT + t];
      const br = b[(0 * nVs + g) * nT + t];
      const bi = b[(1 * nVs + g) * nT + t];
      rr += ar * br + ai * bi;
      ri += ar * bi - ai * br;
    }
    const weight = g === nVs - 1 ? nSc - (nVs - 1) * nG : nG;
    acc += weight * Math.hypot(rr, ri);
  }
  return acc / nSc;
}
