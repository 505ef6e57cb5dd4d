import * as tf from '@tensorflow/tfjs';
import '@tensorflow/tfjs-backend-wasm';

let pending: Promise<void> | null = null;

/** Switch tfjs to the wasm backend once; safe to call from anywhere. */
export async function ready(): Promise<void> {
  if (!pending) {
    pending = tf.setBackend('wasm').then(() => tf.ready());
  }
  await pending;
}

export { tf };
