import { z } from 'zod';
import { tf } from './backend';
import { InputError } from './errors';

export const surrogateConfigSchema = z.object({
  n_c: z.number().int().min(1),
  n_LSTM: z.number().int().min(1),
  k: z.number().int().min(1),
  L_latent: z.number().int().min(1),
  r: z.number().positive(),
  epochs: z.number().int().min(1),
  batch: z.number().int().min(1),
  splits: z.tuple([z.number(), z.number(), z.number()]),
  seed: z.number().int(),
});

export type SurrogateConfig = z.infer<typeof surrogateConfigSchema>;

export function parseConfig(raw: unknown): SurrogateConfig {
  const res = surrogateConfigSchema.safeParse(raw);
  if (!res.success) {
    throw new InputError(`bad surrogate config: ${res.error.message}`);
  }
  return res.data;
}

/** Hyperparameter search space; search-mode configs must stay inside it. */
export const SEARCH_SPACE = {
  n_c: [2, 3, 4],
  n_LSTM: [1, 2, 3],
  k: [3, 5, 9, 17, 33, 65],
  L_latent: [128, 256, 512, 1024],
  rRange: [5e-5, 5e-4] as [number, number],
};

export function inSearchSpace(cfg: SurrogateConfig): boolean {
  const s = SEARCH_SPACE;
  return (
    s.n_c.includes(cfg.n_c) &&
    s.n_LSTM.includes(cfg.n_LSTM) &&
    s.k.includes(cfg.k) &&
    s.L_latent.includes(cfg.L_latent) &&
    cfg.r >= s.rRange[0] &&
    cfg.r <= s.rRange[1]
  );
}

export function assertInSpace(cfg: SurrogateConfig): void {
  if (!inSearchSpace(cfg)) {
    throw new InputError(
      `config outside the search space: n_c=${cfg.n_c} n_LSTM=${cfg.n_LSTM} ` +
        `k=${cfg.k} L_latent=${cfg.L_latent} r=${cfg.r}`,
    );
  }
}

interface ConvConfig {
  filters: number;
  kernelSize: number;
  stride: number;
  activation: 'relu' | 'linear';
  seed: number;
  name: string;
}

/**
 * Same-padded 1D convolution expressed as im2col + matMul so every op in
 * both the forward and backward pass stays on kernels the wasm backend
 * implements. Stride > 1 subsamples the tap matrix before the product.
 */
class MatmulConv1d extends tf.layers.Layer {
  static className = 'MatmulConv1d';

  filters: number;
  kernelSize: number;
  stride: number;
  activation: 'relu' | 'linear';
  seed: number;
  kernel!: ReturnType<tf.layers.Layer['addWeight']>;
  bias!: ReturnType<tf.layers.Layer['addWeight']>;

  constructor(config: ConvConfig) {
    super({ name: config.name });
    this.filters = config.filters;
    this.kernelSize = config.kernelSize;
    this.stride = config.stride;
    this.activation = config.activation;
    this.seed = config.seed;
  }

  build(inputShape: tf.Shape | tf.Shape[]): void {
    const shape = inputShape as tf.Shape;
    const cin = shape[2] as number;
    this.kernel = this.addWeight(
      'kernel',
      [this.kernelSize * cin, this.filters],
      'float32',
      tf.initializers.glorotUniform({ seed: this.seed }),
    );
    this.bias = this.addWeight('bias', [this.filters], 'float32', tf.initializers.zeros());
    this.built = true;
  }

  computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    const shape = inputShape as tf.Shape;
    const len = shape[1] as number;
    return [shape[0], Math.floor(len / this.stride), this.filters];
  }

  /** Same-padded conv with the given stride over a [b, len, cin] tensor. */
  protected convolve(x: tf.Tensor3D, stride: number): tf.Tensor3D {
    const [b, len, cin] = x.shape;
    const k = this.kernelSize;
    const half = Math.floor((k - 1) / 2);
    const padded = tf.pad(x, [
      [0, 0],
      [half, k - 1 - half],
      [0, 0],
    ]);
    const taps: tf.Tensor[] = [];
    for (let i = 0; i < k; i++) {
      taps.push(tf.slice(padded, [0, i, 0], [b, len, cin]));
    }
    let cols = tf.concat(taps, 2);
    let lout = len;
    if (stride > 1) {
      lout = Math.floor(len / stride);
      cols = tf
        .reshape(cols, [b, lout, stride, k * cin])
        .slice([0, 0, 0, 0], [b, lout, 1, k * cin]);
    }
    const flat = tf.reshape(cols, [b * lout, k * cin]);
    let out = tf.add(tf.matMul(flat, this.kernel.read() as tf.Tensor2D), this.bias.read());
    if (this.activation === 'relu') out = tf.relu(out);
    return tf.reshape(out, [b, lout, this.filters]);
  }

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      return this.convolve(x, this.stride);
    });
  }

  getConfig(): tf.serialization.ConfigDict {
    return {
      ...super.getConfig(),
      filters: this.filters,
      kernelSize: this.kernelSize,
      stride: this.stride,
      activation: this.activation,
      seed: this.seed,
    };
  }
}
tf.serialization.registerClass(MatmulConv1d as unknown as tf.serialization.SerializableConstructor<MatmulConv1d>);

/**
 * Transposed counterpart of MatmulConv1d: zero-interleave the sequence to
 * stride times its length, then run the same-padded stride-1 convolution.
 */
class MatmulConvTranspose1d extends MatmulConv1d {
  static className = 'MatmulConvTranspose1d';

  computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    const shape = inputShape as tf.Shape;
    return [shape[0], (shape[1] as number) * this.stride, this.filters];
  }

  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    return tf.tidy(() => {
      const x = (Array.isArray(inputs) ? inputs[0] : inputs) as tf.Tensor3D;
      const [b, len, cin] = x.shape;
      let up: tf.Tensor3D = x;
      if (this.stride > 1) {
        const lifted = tf.reshape(x, [b, len, 1, cin]);
        const zeros = tf.zeros([b, len, this.stride - 1, cin]);
        up = tf.reshape(tf.concat([lifted, zeros], 2), [b, len * this.stride, cin]);
      }
      return this.convolve(up, 1);
    });
  }
}
tf.serialization.registerClass(
  MatmulConvTranspose1d as unknown as tf.serialization.SerializableConstructor<MatmulConvTranspose1d>,
);

export { MatmulConv1d, MatmulConvTranspose1d };

/**
 * Symmetric encoder-decoder over a [nt, 3] waveform: n_c stride-2 convs up
 * to L_latent channels, n_LSTM recurrent layers over the compressed
 * sequence, n_c upsampling convs back to full length, then three
 * independent single-component heads concatenated to [nt, 3].
 */
export function buildModel(
  cfg: SurrogateConfig,
  nt: number,
  enforceSpace = false,
): tf.LayersModel {
  parseConfig(cfg);
  if (enforceSpace) assertInSpace(cfg);
  const strideTotal = 2 ** cfg.n_c;
  if (nt % strideTotal !== 0) {
    throw new InputError(`sequence length ${nt} not divisible by total stride ${strideTotal}`);
  }
  if (nt / strideTotal < 1) {
    throw new InputError(`sequence length ${nt} too short for ${cfg.n_c} stride-2 layers`);
  }

  const input = tf.input({ shape: [nt, 3], name: 'wave' });
  let x = input;
  for (let i = 0; i < cfg.n_c; i++) {
    x = new MatmulConv1d({
      filters: cfg.L_latent,
      kernelSize: cfg.k,
      stride: 2,
      activation: 'relu',
      seed: cfg.seed + 10 + i,
      name: `enc${i}`,
    }).apply(x) as tf.SymbolicTensor;
  }
  for (let i = 0; i < cfg.n_LSTM; i++) {
    // glorot for the recurrent kernel too: the default orthogonal init runs
    // a very slow QR at the wider latent sizes
    x = tf.layers
      .lstm({
        units: cfg.L_latent,
        returnSequences: true,
        implementation: 2,
        kernelInitializer: tf.initializers.glorotUniform({ seed: cfg.seed + 50 + i }),
        recurrentInitializer: tf.initializers.glorotUniform({ seed: cfg.seed + 70 + i }),
        name: `lstm${i}`,
      })
      .apply(x) as tf.SymbolicTensor;
  }
  for (let i = 0; i < cfg.n_c; i++) {
    x = new MatmulConvTranspose1d({
      filters: cfg.L_latent,
      kernelSize: cfg.k,
      stride: 2,
      activation: 'relu',
      seed: cfg.seed + 30 + i,
      name: `dec${i}`,
    }).apply(x) as tf.SymbolicTensor;
  }
  const heads = [0, 1, 2].map(
    (i) =>
      new MatmulConv1d({
        filters: 1,
        kernelSize: cfg.k,
        stride: 1,
        activation: 'linear',
        seed: cfg.seed + 90 + i,
        name: `head${i}`,
      }).apply(x) as tf.SymbolicTensor,
  );
  const output = tf.layers.concatenate({ axis: -1, name: 'response' }).apply(heads);
  return tf.model({ inputs: input, outputs: output as tf.SymbolicTensor });
}
