import assert from 'node:assert/strict';
import {test} from 'node:test';
import {gather, loadDataset, readHeader, sampleCorrelation, splitIndices} from '../src/dataset';
import {ensureDataset, referenceVectors} from './fixtures';

const DATA = ensureDataset('small', 400, 11);

test('header fields match the exporter', () => {
  const header = readHeader(DATA);
  assert.equal(header.nSc, 980);
  assert.equal(header.nT, 16);
  assert.equal(header.nSamples, 400);
});

test('dataset loads with canonical unit vectors', () => {
  const ds = loadDataset(DATA, 16, 50);
  assert.equal(ds.n, 50);
  assert.equal(ds.nVs, 62);
  for (let s = 0; s < ds.n; s++) {
    for (let g = 0; g < ds.nVs; g++) {
      let norm2 = 0;
      for (let t = 0; t < ds.nT; t++) {
        const re = ds.tensors[((s * 2 + 0) * ds.nVs + g) * ds.nT + t];
        const im = ds.tensors[((s * 2 + 1) * ds.nVs + g) * ds.nT + t];
        norm2 += re * re + im * im;
      }
      assert.ok(Math.abs(norm2 - 1) < 1e-5, `sample ${s} group ${g} norm ${norm2}`);
      // canonical phase: first element real non-negative
      const re0 = ds.tensors[((s * 2 + 0) * ds.nVs + g) * ds.nT + 0];
      const im0 = ds.tensors[((s * 2 + 1) * ds.nVs + g) * ds.nT + 0];
      assert.ok(re0 >= -1e-7);
      assert.ok(Math.abs(im0) < 1e-6);
    }
  }
  assert.ok(ds.los.some(Boolean) && ds.los.some(v => !v));
});

test('vector extraction matches the simulator implementation', () => {
  const ds = loadDataset(DATA, 16, 1);
  const [refReal, refImag] = referenceVectors(DATA, 16);
  for (let g = 0; g < ds.nVs; g++) {
    for (let t = 0; t < ds.nT; t++) {
      const re = ds.tensors[(0 * ds.nVs + g) * ds.nT + t];
      const im = ds.tensors[(1 * ds.nVs + g) * ds.nT + t];
      assert.ok(Math.abs(re - refReal[g][t]) < 1e-5, `re mismatch g=${g} t=${t}`);
      assert.ok(Math.abs(im - refImag[g][t]) < 1e-5, `im mismatch g=${g} t=${t}`);
    }
  }
});

test('split is a deterministic partition', () => {
  const a = splitIndices(100, 0.2, 7);
  const b = splitIndices(100, 0.2, 7);
  assert.deepEqual(a, b);
  const all = [...a.train, ...a.test].sort((x, y) => x - y);
  assert.deepEqual(all, Array.from({length: 100}, (_, i) => i));
  assert.equal(a.test.length, 20);
});

test('gather concatenates the requested samples', () => {
  const ds = loadDataset(DATA, 16, 10);
  const out = gather(ds, [3, 7]);
  const per = 2 * ds.nVs * ds.nT;
  assert.equal(out.length, 2 * per);
  assert.deepEqual(Array.from(out.subarray(0, per)),
                   Array.from(ds.tensors.subarray(3 * per, 4 * per)));
});

test('sample correlation: identity is 1, orthogonal is 0', () => {
  const ds = loadDataset(DATA, 16, 2);
  const per = 2 * ds.nVs * ds.nT;
  const a = ds.tensors.subarray(0, per);
  const self = sampleCorrelation(a, a, ds.nVs, ds.nT, ds.nSc, ds.nG);
  assert.ok(Math.abs(self - 1) < 1e-6);
  // a global phase rotation must not change the metric
  const rotated = new Float32Array(per);
  const c = Math.cos(1.1), s = Math.sin(1.1);
  for (let g = 0; g < ds.nVs; g++) {
    for (let t = 0; t < ds.nT; t++) {
      const re = a[(0 * ds.nVs + g) * ds.nT + t];
      const im = a[(1 * ds.nVs + g) * ds.nT + t];
      rotated[(0 * ds.nVs + g) * ds.nT + t] = re * c - im * s;
      rotated[(1 * ds.nVs + g) * ds.nT + t] = re * s + im * c;
    }
  }
  const rot = sampleCorrelation(a, rotated, ds.nVs, ds.nT, ds.nSc, ds.nG);
  assert.ok(Math.abs(rot - 1) < 1e-5);
  // orthogonal per-group vectors: swap re/im of a basis-like vector
  const orth = new Float32Array(per);
  for (let g = 0; g < ds.nVs; g++) {
    // e_t0 rotated 90 degrees against itself in the complex inner product
    orth[(0 * ds.nVs + g) * ds.nT + 1] = 1;
  }
  const basis = new Float32Array(per);
  for (let g = 0; g < ds.nVs; g++) basis[(0 * ds.nVs + g) * ds.nT + 0] = 1;
  const zero = sampleCorrelation(basis, orth, ds.nVs, ds.nT, ds.nSc, ds.nG);
  assert.ok(Math.abs(zero) < 1e-9);
});
