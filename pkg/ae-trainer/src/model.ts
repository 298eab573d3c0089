/**
 * Convolutional CSI autoencoder with a channel-attention encoder, a dense
 * latent of dimension ceil(eta * 2 * nVs * nT), an entropy bottleneck and a
 * decoder with two channel-attention refinement blocks. A final convolution
 * and per-vector normalization guarantee unit-norm reconstructed vectors
 * regardless of training state.
 */
import * as fs from 'fs';
import * as path from 'path';
import {tf} from './backend';
import {Bitstream, DimTable, LogisticPrior, decodeLatent, encodeLatent} from './entropy';

export function latentDim(eta: number, nVs: number, nT: number): number {
  if (!(eta > 0 && eta <= 1)) {
    throw new Error(`eta must be in (0, 1], got ${eta}`);
  }
  const m = Math.ceil(eta * 2 * nVs * nT);
  if (m < 1) throw new Error('latent dimension must be at least 1');
  return m;
}

export interface ModelConfig {
  eta: number;
  nVs: number;
  nT: number;
  nSc: number;
  nG: number;
  encoderMaps?: number;   // feature maps of the first encoder conv
  bodyMaps?: number;      // feature maps through the bottleneck reshape
  lambdaRate?: number;    // rate weight in the training loss, calibrated once
  seed?: number;          // initializer seed; keeps training runs reproducible
}

interface CaBlock {
  squeeze: tf.layers.Layer;
  excite: tf.layers.Layer;
}

function channelAttention(maps: number, reduction: number, tag: string,
                          init: () => ReturnType<typeof tf.initializers.glorotUniform>
                          ): CaBlock {
  return {
    squeeze: tf.layers.dense({
      units: Math.max(2, Math.floor(maps / reduction)),
      activation: 'relu', name: `${tag}_squeeze`, kernelInitializer: init(),
    }),
    excite: tf.layers.dense({units: maps, activation: 'sigmoid',
                             name: `${tag}_excite`, kernelInitializer: init()}),
  };
}

function applyAttention(x: tf.Tensor, ca: CaBlock, maps: number): tf.Tensor {
  const pooled = tf.mean(x, [1, 2]);
  const scale = ca.excite.apply(ca.squeeze.apply(pooled)) as tf.Tensor;
  return tf.mul(x, tf.reshape(scale, [-1, 1, 1, maps]));
}

export type ForwardMode = 'noise' | 'round' | 'bypass';

let modelInstances = 0;

export class CsiAutoencoder {
  readonly m: number;
  readonly encoderMaps: number;
  readonly bodyMaps: number;
  lambdaRate: number;

  private readonly enc1: tf.layers.Layer;
  private readonly encCa: CaBlock;
  private readonly enc2: tf.layers.Layer;
  private readonly encDense: tf.layers.Layer;
  private readonly decDense: tf.layers.Layer;
  private readonly refine: Array<{conv: tf.layers.Layer; ca: CaBlock}>;
  private readonly finalConv: tf.layers.Layer;
  readonly prior: LogisticPrior;
  private built = false;

  constructor(readonly config: ModelConfig) {
    this.m = latentDim(config.eta, config.nVs, config.nT);
    this.encoderMaps = config.encoderMaps ?? 16;
    this.bodyMaps = config.bodyMaps ?? 4;
    this.lambdaRate = config.lambdaRate ?? 1e-4;
    const uid = `m${modelInstances++}`;   // layer names are global in tfjs
    let seedCounter = (config.seed ?? 7) * 1000;
    const init = () => tf.initializers.glorotUniform({seed: seedCounter++});

    this.enc1 = tf.layers.conv2d({
      filters: this.encoderMaps, kernelSize: 3, padding: 'same',
      activation: 'relu', name: `${uid}_enc1`, kernelInitializer: init(),
    });
    this.encCa = channelAttention(this.encoderMaps, 4, `${uid}_enc_ca`, init);
    this.enc2 = tf.layers.conv2d({
      filters: this.bodyMaps, kernelSize: 3, padding: 'same', name: `${uid}_enc2`,
      kernelInitializer: init(),
    });
    this.encDense = tf.layers.dense({units: this.m, name: `${uid}_enc_dense`,
                                     kernelInitializer: init()});
    this.decDense = tf.layers.dense({
      units: config.nVs * config.nT * this.bodyMaps, name: `${uid}_dec_dense`,
      kernelInitializer: init(),
    });
    this.refine = [0, 1].map(i => ({
      conv: tf.layers.conv2d({
        filters: this.bodyMaps, kernelSize: 3, padding: 'same',
        activation: 'relu', name: `${uid}_refine${i}_conv`, kernelInitializer: init(),
      }),
      ca: channelAttention(this.bodyMaps, 2, `${uid}_refine${i}_ca`, init),
    }));
    this.finalConv = tf.layers.conv2d({filters: 2, kernelSize: 3, padding: 'same',
                                       name: `${uid}_final_conv`, kernelInitializer: init()});
    this.prior = new LogisticPrior(this.m);
  }

  /** Latent vectors of a [b, nVs, nT, 2] batch. */
  encode(x: tf.Tensor): tf.Tensor {
    return tf.tidy(() => {
      let h = this.enc1.apply(x) as tf.Tensor;
      h = applyAttention(h, this.encCa, this.encoderMaps);
      h = this.enc2.apply(h) as tf.Tensor;
      const flat = tf.reshape(h, [-1, this.config.nVs * this.config.nT * this.bodyMaps]);
      return this.encDense.apply(flat) as tf.Tensor;
    });
  }

  /** Reconstruction from latents; output rows are unit vectors. */
  decode(latent: tf.Tensor): tf.Tensor {
    return tf.tidy(() => {
      const {nVs, nT} = this.config;
      let d = tf.reshape(this.decDense.apply(latent) as tf.Tensor,
                         [-1, nVs, nT, this.bodyMaps]);
      for (const block of this.refine) {
        let c = block.conv.apply(d) as tf.Tensor;
        c = applyAttention(c, block.ca, this.bodyMaps);
        d = tf.add(d, c);
      }
      const out = this.finalConv.apply(d) as tf.Tensor;
      const norm = tf.sqrt(tf.maximum(tf.sum(tf.square(out), [2, 3], true), 1e-24));
      return tf.div(out, norm);
    });
  }

  /** Full pass; `noise` emulates quantization during training, `round`
   *  applies real quantization, `bypass` disables the bottleneck. */
  forward(x: tf.Tensor, mode: ForwardMode): {recon: tf.Tensor; latent: tf.Tensor;
                                             rateBits: tf.Tensor} {
    const latent = this.encode(x);
    let bottled: tf.Tensor;
    if (mode === 'noise') {
      bottled = tf.add(latent, tf.sub(tf.randomUniform(latent.shape as number[]), 0.5));
    } else if (mode === 'round') {
      bottled = tf.round(latent);
    } else {
      bottled = latent;
    }
    const rateBits = this.prior.rateBits(bottled);
    const recon = this.decode(bottled);
    if (bottled !== latent) bottled.dispose();
    return {recon, latent, rateBits};
  }

  ensureBuilt(): void {
    if (this.built) return;
    tf.tidy(() => {
      const probe = tf.zeros([1, this.config.nVs, this.config.nT, 2]);
      const {recon, latent, rateBits} = this.forward(probe, 'bypass');
      recon.dispose(); latent.dispose(); rateBits.dispose();
    });
    this.built = true;
  }

  get layers(): tf.layers.Layer[] {
    return [
      this.enc1, this.encCa.squeeze, this.encCa.excite, this.enc2, this.encDense,
      this.decDense,
      ...this.refine.flatMap(b => [b.conv, b.ca.squeeze, b.ca.excite]),
      this.finalConv,
    ];
  }

  get trainableVariables(): tf.Variable[] {
    this.ensureBuilt();
    const vars: tf.Variable[] = [];
    for (const layer of this.layers) {
      for (const w of layer.weights) vars.push(w.read() as unknown as tf.Variable);
    }
    return vars;
  }

  /** Entropy tables from the trained prior (rebuild after training). */
  codingTables(): DimTable[] {
    return this.prior.buildTables();
  }

  encodeToBitstream(latentRow: Float32Array | Int32Array, tables: DimTable[]): Bitstream {
    const q = new Int32Array(latentRow.length);
    for (let i = 0; i < q.length; i++) q[i] = Math.round(latentRow[i]);
    return encodeLatent(q, tables);
  }

  decodeFromBitstream(stream: Bitstream, tables: DimTable[]): Int32Array {
    return decodeLatent(stream, tables);
  }

  save(dir: string): void {
    this.ensureBuilt();
    fs.mkdirSync(dir, {recursive: true});
    const entries: Array<{index: number; shape: number[]}> = [];
    const blobs: Float32Array[] = [];
    const push = (w: tf.Tensor) => {
      entries.push({index: entries.length, shape: w.shape.slice()});
      blobs.push(w.dataSync() as Float32Array);
    };
    for (const layer of this.layers) {
      layer.getWeights().forEach(push);
    }
    for (const v of this.prior.variables) push(v);
    const total = blobs.reduce((acc, b) => acc + b.length, 0);
    const packed = new Float32Array(total);
    let off = 0;
    for (const b of blobs) {
      packed.set(b, off);
      off += b.length;
    }
    fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(packed.buffer));
    fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify({
      config: {...this.config, encoderMaps: this.encoderMaps, bodyMaps: this.bodyMaps,
               lambdaRate: this.lambdaRate},
      latentDim: this.m,
      weights: entries,
    }, null, 2));
  }

  /** Weight order is structural (layer enumeration then prior), so loading
   *  matches by position with a shape check. */
  static load(dir: string): CsiAutoencoder {
    const meta = JSON.parse(fs.readFileSync(path.join(dir, 'model.json'), 'utf8'));
    const model = new CsiAutoencoder(meta.config);
    model.ensureBuilt();
    const raw = fs.readFileSync(path.join(dir, 'weights.bin'));
    const packed = new Float32Array(raw.buffer, raw.byteOffset, raw.byteLength / 4);
    let off = 0;
    let idx = 0;
    const take = (expected: number[]) => {
      const entry = meta.weights[idx++];
      if (JSON.stringify(entry.shape) !== JSON.stringify(expected)) {
        throw new Error(`weight ${entry.index} shape ${entry.shape} != ${expected}`);
      }
      const size = expected.reduce((a: number, b: number) => a * b, 1);
      const t = tf.tensor(packed.slice(off, off + size), expected);
      off += size;
      return t;
    };
    for (const layer of model.layers) {
      const updated = layer.getWeights().map(w => take(w.shape.slice()));
      layer.setWeights(updated);
      updated.forEach(t => t.dispose());
    }
    for (const v of model.prior.variables) {
      const t = take(v.shape.slice());
      v.assign(t);
      t.dispose();
    }
    return model;
  }
}
