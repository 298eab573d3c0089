/**
 * Compressor profile export: the JSON schema consumed by the simulator
 * ({eta, latent_dim, conditions.los/nlos, size_bits}), byte-aligned sizes.
 */
import * as fs from 'fs';
import {EvalResult} from './evaluate';

export interface ProfileJson {
  eta: number;
  latent_dim: number;
  conditions: {
    los: {corr_mean: number; corr_p1: number};
    nlos: {corr_mean: number; corr_p1: number};
  };
  size_bits: {median: number; min: number; max: number; stdev: number};
}

const byteAlign = (bits: number) => Math.max(8, Math.round(bits / 8) * 8);

export function buildProfile(result: EvalResult, eta: number, latentDim: number): ProfileJson {
  if (result.los.count === 0 || result.nlos.count === 0) {
    throw new Error('profile needs both LOS and NLOS evaluation samples');
  }
  const clamp = (x: number) => Math.min(1, Math.max(0, x));
  return {
    eta,
    latent_dim: latentDim,
    conditions: {
      los: {corr_mean: clamp(result.los.corrMean), corr_p1: clamp(result.los.corrP1)},
      nlos: {corr_mean: clamp(result.nlos.corrMean), corr_p1: clamp(result.nlos.corrP1)},
    },
    size_bits: {
      median: byteAlign(result.sizeBits.median),
      min: Math.min(byteAlign(result.sizeBits.min), byteAlign(result.sizeBits.median)),
      max: Math.max(byteAlign(result.sizeBits.max), byteAlign(result.sizeBits.median)),
      stdev: result.sizeBits.stdev,
    },
  };
}

export function exportProfile(result: EvalResult, eta: number, latentDim: number,
                              path: string): ProfileJson {
  const profile = buildProfile(result, eta, latentDim);
  fs.writeFileSync(path, JSON.stringify(profile, null, 2) + '\n');
  return profile;
}
