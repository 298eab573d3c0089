/**
 * Evaluation: every sample is pushed through the real quantize/entropy-code
 * path, the actual bitstream length is recorded, and the reconstruction is
 * scored with the mean cosine correlation over all data subcarriers,
 * aggregated by LOS/NLOS condition.
 */
import {tf} from './backend';
import {CsiDataset, gather, sampleCorrelation} from './dataset';
import {CsiAutoencoder} from './model';

export interface ConditionStats {
  corrMean: number;
  corrP1: number;
  count: number;
}

export interface EvalResult {
  los: ConditionStats;
  nlos: ConditionStats;
  sizeBits: {median: number; min: number; max: number; stdev: number};
  correlations: number[];
  bits: number[];
  losslessChecked: boolean;
}

function percentile(sorted: number[], p: number): number {
  const rank = Math.max(1, Math.ceil((p / 100) * sorted.length));
  return sorted[rank - 1];
}

function conditionStats(correlations: number[]): ConditionStats {
  if (correlations.length === 0) return {corrMean: 0, corrP1: 0, count: 0};
  const sorted = [...correlations].sort((a, b) => a - b);
  const mean = sorted.reduce((a, b) => a + b, 0) / sorted.length;
  return {corrMean: mean, corrP1: percentile(sorted, 1), count: sorted.length};
}

export interface EvaluateOptions {
  batchSize?: number;
  bypass?: boolean;        // disable quantization: raw float32 accounting
  checkLossless?: boolean; // verify decode(encode(q)) === q on every sample
}

export function evaluateModel(model: CsiAutoencoder, ds: CsiDataset, indices: number[],
                              opts: EvaluateOptions = {}): EvalResult {
  const batch = opts.batchSize ?? 64;
  const bypass = opts.bypass ?? false;
  const checkLossless = opts.checkLossless ?? true;
  model.ensureBuilt();
  const tables = bypass ? [] : model.codingTables();
  const per = 2 * ds.nVs * ds.nT;

  const correlations: number[] = [];
  const bits: number[] = [];
  const losCorr: number[] = [];
  const nlosCorr: number[] = [];

  for (let start = 0; start < indices.length; start += batch) {
    const slice = indices.slice(start, start + batch);
    const data = gather(ds, slice);
    const x = tf.tidy(() => tf.transpose(
      tf.tensor(data, [slice.length, 2, ds.nVs, ds.nT]), [0, 2, 3, 1]));
    const latent = model.encode(x);
    const latentData = latent.dataSync() as Float32Array;

    let bottled: tf.Tensor;
    if (bypass) {
      bottled = latent;
      for (let i = 0; i < slice.length; i++) bits.push(32 * model.m);
    } else {
      const rows = new Float32Array(latentData.length);
      for (let i = 0; i < slice.length; i++) {
        const row = latentData.subarray(i * model.m, (i + 1) * model.m);
        const stream = model.encodeToBitstream(row, tables);
        bits.push(stream.bits);
        const decoded = model.decodeFromBitstream(stream, tables);
        if (checkLossless) {
          for (let j = 0; j < model.m; j++) {
            if (decoded[j] !== Math.round(row[j])) {
              throw new Error(`entropy coding not lossless at sample ${slice[i]}, dim ${j}`);
            }
          }
        }
        for (let j = 0; j < model.m; j++) rows[i * model.m + j] = decoded[j];
      }
      bottled = tf.tensor(rows, [slice.length, model.m]);
    }

    const recon = model.decode(bottled);
    const reconData = tf.tidy(() => tf.transpose(recon, [0, 3, 1, 2])).dataSync() as Float32Array;
    for (let i = 0; i < slice.length; i++) {
      const rho = sampleCorrelation(
        data.subarray(i * per, (i + 1) * per),
        reconData.subarray(i * per, (i + 1) * per),
        ds.nVs, ds.nT, ds.nSc, ds.nG);
      correlations.push(rho);
      (ds.los[indices[start + i]] ? losCorr : nlosCorr).push(rho);
    }
    recon.dispose();
    if (bottled !== latent) bottled.dispose();
    latent.dispose();
    x.dispose();
  }

  const sortedBits = [...bits].sort((a, b) => a - b);
  const mean = sortedBits.reduce((a, b) => a + b, 0) / sortedBits.length;
  const variance = sortedBits.reduce((a, b) => a + (b - mean) ** 2, 0) / sortedBits.length;
  return {
    los: conditionStats(losCorr),
    nlos: conditionStats(nlosCorr),
    sizeBits: {
      median: percentile(sortedBits, 50),
      min: sortedBits[0],
      max: sortedBits[sortedBits.length - 1],
      stdev: Math.sqrt(variance),
    },
    correlations,
    bits,
    losslessChecked: checkLossless && !bypass,
  };
}
