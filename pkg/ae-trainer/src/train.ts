/**
 * Training loop: ADAM on reconstruction MSE plus the weighted rate term of
 * the entropy bottleneck. Aborts with diagnostics if the loss diverges.
 */
import {tf} from './backend';
import {CsiDataset, gather} from './dataset';
import {CsiAutoencoder} from './model';

export interface TrainOptions {
  epochs: number;
  batchSize?: number;
  learningRate?: number;
  logEvery?: number;
  verbose?: boolean;
  /** 'noise' trains through the quantization proxy; 'bypass' is the plain
   *  MSE objective without the bottleneck. */
  bottleneck?: 'noise' | 'bypass';
}

export interface TrainReport {
  lossCurve: number[];       // per-epoch mean total loss
  mseCurve: number[];
  rateCurve: number[];       // mean bits per sample under the noise proxy
  epochs: number;
}

export function trainModel(model: CsiAutoencoder, ds: CsiDataset, indices: number[],
                           opts: TrainOptions): TrainReport {
  const batch = opts.batchSize ?? 32;
  const lr = opts.learningRate ?? 2e-3;
  const verbose = opts.verbose ?? false;
  const mode = opts.bottleneck ?? 'noise';
  if (indices.length === 0) throw new Error('training set is empty');

  model.ensureBuilt();
  const optimizer = tf.train.adam(lr);
  const vars = [...model.trainableVariables, ...model.prior.variables];
  const per = 2 * ds.nVs * ds.nT;
  const report: TrainReport = {lossCurve: [], mseCurve: [], rateCurve: [], epochs: 0};

  for (let epoch = 0; epoch < opts.epochs; epoch++) {
    let lossSum = 0;
    let mseSum = 0;
    let rateSum = 0;
    let steps = 0;
    for (let start = 0; start + 1 <= indices.length; start += batch) {
      const slice = indices.slice(start, start + batch);
      const data = gather(ds, slice);
      const xb = tf.tidy(() => tf.transpose(
        tf.tensor(data, [slice.length, 2, ds.nVs, ds.nT]), [0, 2, 3, 1]));
      let mseVal = 0;
      let rateVal = 0;
      const loss = optimizer.minimize(() => {
        const {recon, latent, rateBits} = model.forward(xb, mode);
        const mse = tf.div(tf.sum(tf.square(tf.sub(recon, xb))), slice.length);
        const rate = tf.mean(rateBits);
        mseVal = mse.dataSync()[0];
        rateVal = rate.dataSync()[0];
        latent.dispose();
        return tf.add(mse, tf.mul(model.lambdaRate, rate)) as tf.Scalar;
      }, true, vars) as tf.Scalar;
      const lossVal = loss.dataSync()[0];
      loss.dispose();
      xb.dispose();
      if (!Number.isFinite(lossVal)) {
        optimizer.dispose();
        throw new Error(
          `training diverged at epoch ${epoch}, step ${steps}: loss=${lossVal}, ` +
          `mse=${mseVal}, rate=${rateVal}`);
      }
      lossSum += lossVal;
      mseSum += mseVal;
      rateSum += rateVal;
      steps += 1;
    }
    report.lossCurve.push(lossSum / steps);
    report.mseCurve.push(mseSum / steps);
    report.rateCurve.push(rateSum / steps);
    report.epochs = epoch + 1;
    if (verbose && (epoch % (opts.logEvery ?? 1) === 0)) {
      console.log(`epoch ${epoch}: loss ${(lossSum / steps).toFixed(4)} ` +
                  `(mse ${(mseSum / steps).toFixed(4)}, ` +
                  `rate ${(rateSum / steps).toFixed(1)} bits)`);
    }
  }
  optimizer.dispose();
  return report;
}
