/**
 * Test fixtures: channel datasets are produced by the simulator's CLI, so
 * these tests exercise the real file interface between the two packages.
 */
import {spawnSync} from 'child_process';
import * as fs from 'fs';
import * as path from 'path';

const CACHE = path.join(__dirname, '..', '..', '.cache', 'ae-trainer');

export function ensureDataset(name: string, samples: number, seed: number): string {
  fs.mkdirSync(CACHE, {recursive: true});
  const out = path.join(CACHE, `${name}.bin`);
  if (fs.existsSync(out) && fs.existsSync(out + '.json')) {
    return out;
  }
  const run = spawnSync('python3', [
    '-m', 'cobfsim.cli', 'export-channels',
    '--out', out, '--samples', String(samples), '--seed', String(seed),
  ], {encoding: 'utf8'});
  if (run.status !== 0) {
    throw new Error(`export-channels failed: ${run.stderr || run.stdout}`);
  }
  return out;
}

/** First-sample beamforming vectors computed by the simulator package,
 *  used as a cross-implementation oracle for the extraction code here. */
export function referenceVectors(datasetPath: string, nG = 16): number[][][] {
  const script = [
    'import json, sys',
    'from cobfsim.channel import load_channel_dataset',
    'from cobfsim.csi import extract_v',
    `sidecar, tensors = load_channel_dataset(${JSON.stringify(datasetPath)})`,
    `vs = extract_v(tensors[0], n_g=${nG})`,
    'planes = [vs.vectors.real.tolist(), vs.vectors.imag.tolist()]',
    'print(json.dumps(planes))',
  ].join('\n');
  const run = spawnSync('python3', ['-c', script], {encoding: 'utf8'});
  if (run.status !== 0) {
    throw new Error(`reference extraction failed: ${run.stderr}`);
  }
  return JSON.parse(run.stdout);
}

export function validateProfileWithSimulator(profilePath: string): number {
  const run = spawnSync('python3', ['-m', 'cobfsim.cli', 'profile-validate', profilePath],
                        {encoding: 'utf8'});
  return run.status ?? 3;
}
