/**
 * Backend bootstrap. The WASM backend is an order of magnitude faster than
 * the plain-JS CPU backend in Node, but ships without the convolution
 * gradient kernels, so the stride-1 SAME cases used by this model are
 * registered here as composites of supported ops.
 */
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';
import {setWasmPaths} from '@tensorflow/tfjs-backend-wasm';

let ready: Promise<void> | null = null;

function registerConvGrads(backendName: string) {
  const registered = (name: string) =>
    tf.getKernel !== undefined && (tf as any).getKernel(name, backendName) != null;

  if (!registered('Conv2DBackpropFilter')) {
    tf.registerKernel({
      kernelName: 'Conv2DBackpropFilter',
      backendName,
      kernelFunc: ({inputs, attrs}: any) => {
        const {x, dy} = inputs;
        const {strides, pad, filterShape} = attrs;
        const stride = Array.isArray(strides) ? strides[0] : strides;
        if (stride !== 1 || pad !== 'same') {
          throw new Error('composite Conv2DBackpropFilter supports stride-1 SAME only');
        }
        const [kh, kw, cin, cout] = filterShape;
        return tf.tidy(() => {
          // dW[kh,kw,ci,co] = sum_b,h,w xPad[b,h+kh,w+kw,ci] * dy[b,h,w,co]
          const [b, h, w] = x.shape;
          const ph = Math.floor((kh - 1) / 2);
          const pw = Math.floor((kw - 1) / 2);
          const xp = tf.pad(x, [[0, 0], [ph, kh - 1 - ph], [pw, kw - 1 - pw], [0, 0]]);
          const cols: tf.Tensor[] = [];
          for (let i = 0; i < kh; i++) {
            for (let j = 0; j < kw; j++) {
              cols.push(tf.slice(xp, [0, i, j, 0], [b, h, w, cin]));
            }
          }
          const patches = tf.reshape(tf.stack(cols, 3), [b * h * w, kh * kw * cin]);
          const dyFlat = tf.reshape(dy, [b * h * w, cout]);
          return tf.reshape(tf.matMul(patches, dyFlat, true, false), [kh, kw, cin, cout]);
        });
      },
    });
  }

  if (!registered('Conv2DBackpropInput')) {
    tf.registerKernel({
      kernelName: 'Conv2DBackpropInput',
      backendName,
      kernelFunc: ({inputs, attrs}: any) => {
        const {dy, filter} = inputs;
        const {strides, pad} = attrs;
        const stride = Array.isArray(strides) ? strides[0] : strides;
        if (stride !== 1 || pad !== 'same') {
          throw new Error('composite Conv2DBackpropInput supports stride-1 SAME only');
        }
        return tf.tidy(() => {
          // full correlation with the 180-degree-rotated, channel-swapped filter
          const flipped = tf.transpose(tf.reverse(filter, [0, 1]), [0, 1, 3, 2]);
          return tf.conv2d(dy, flipped, 1, 'same');
        });
      },
    });
  }
}

/** Initialize tfjs once; prefers WASM and falls back to the JS CPU backend. */
export function initBackend(): Promise<void> {
  if (ready === null) {
    ready = (async () => {
      try {
        const wasmDist = path.join(
          require.resolve('@tensorflow/tfjs-backend-wasm/package.json'), '..', 'dist');
        setWasmPaths(wasmDist + path.sep);
        await tf.setBackend('wasm');
        await tf.ready();
        registerConvGrads('wasm');
      } catch {
        await tf.setBackend('cpu');
        await tf.ready();
      }
    })();
  }
  return ready;
}

export {tf};
