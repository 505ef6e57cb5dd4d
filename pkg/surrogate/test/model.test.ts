import { beforeAll, describe, expect, it } from 'vitest';
import { ready, tf } from '../src/backend';
import { SurrogateConfig, buildModel, inSearchSpace, parseConfig } from '../src/model';

const base: SurrogateConfig = {
  n_c: 2,
  n_LSTM: 1,
  k: 3,
  L_latent: 16,
  r: 2e-4,
  epochs: 1,
  batch: 4,
  splits: [0.8, 0.1, 0.1],
  seed: 5,
};

beforeAll(async () => {
  await ready();
});

describe('model construction', () => {
  it('builds the reference architecture with a [nt, 3] output', () => {
    const cfg = { ...base, n_c: 2, n_LSTM: 2, k: 9, L_latent: 512 };
    const model = buildModel(cfg, 64);
    expect(model.outputs[0].shape).toEqual([null, 64, 3]);
    expect(model.countParams()).toBeGreaterThan(1e6);
    model.dispose();
  });

  it('halves the sequence length per encoder layer', () => {
    const model = buildModel({ ...base, n_c: 2 }, 64);
    expect(model.getLayer('enc0').outputShape).toEqual([null, 32, 16]);
    expect(model.getLayer('enc1').outputShape).toEqual([null, 16, 16]);
    expect(model.getLayer('dec1').outputShape).toEqual([null, 64, 16]);
    model.dispose();
  });

  it('has a deterministic parameter count and seeded weights per config', () => {
    const a = buildModel(base, 32);
    const b = buildModel(base, 32);
    expect(a.countParams()).toBe(b.countParams());
    const wa = a.getLayer('enc0').getWeights()[0].dataSync();
    const wb = b.getLayer('enc0').getWeights()[0].dataSync();
    expect(Array.from(wa)).toEqual(Array.from(wb));
    a.dispose();
    b.dispose();
  });

  it('rejects sequence lengths the stride cannot divide', () => {
    expect(() => buildModel({ ...base, n_c: 3 }, 100)).toThrow(/not divisible/);
  });

  it('enforces search-space membership only when asked', () => {
    const out = { ...base, L_latent: 64 };
    expect(inSearchSpace(out)).toBe(false);
    const m = buildModel(out, 32);
    m.dispose();
    expect(() => buildModel(out, 32, true)).toThrow(/outside the search space/);
    const inSpace = { ...base, k: 5, L_latent: 128, r: 1e-4 };
    const m2 = buildModel(inSpace, 32, true);
    m2.dispose();
  });

  it('rejects malformed configs', () => {
    expect(() => parseConfig({ ...base, r: -1 })).toThrow(/bad surrogate config/);
    expect(() => parseConfig({ ...base, n_c: 2.5 })).toThrow(/bad surrogate config/);
    const { k: _k, ...missing } = base;
    expect(() => parseConfig(missing)).toThrow(/bad surrogate config/);
  });
});

describe('model output', () => {
  it('preserves the input length for every in-space depth and maps zero to zero', () => {
    const nt = 64;
    const configs = [
      { ...base, n_c: 2, n_LSTM: 1, k: 3, L_latent: 128 },
      { ...base, n_c: 3, n_LSTM: 1, k: 5, L_latent: 128 },
      { ...base, n_c: 4, n_LSTM: 2, k: 9, L_latent: 128 },
    ];
    for (const cfg of configs) {
      const model = buildModel(cfg, nt, true);
      const out = model.predict(tf.zeros([1, nt, 3])) as tf.Tensor3D;
      expect(out.shape).toEqual([1, nt, 3]);
      // fresh biases are zero, so the zero waveform propagates unchanged
      const vals = out.dataSync();
      for (let i = 0; i < vals.length; i++) expect(vals[i]).toBe(0);
      out.dispose();
      model.dispose();
    }
  });

  it('responds to nonzero input with finite values', () => {
    const model = buildModel(base, 32);
    const x = tf.randomUniform([2, 32, 3], -1, 1, 'float32', 11);
    const out = model.predict(x) as tf.Tensor3D;
    const vals = out.dataSync();
    let nonzero = 0;
    for (const v of vals) {
      expect(Number.isFinite(v)).toBe(true);
      if (v !== 0) nonzero++;
    }
    expect(nonzero).toBeGreaterThan(0);
    x.dispose();
    out.dispose();
    model.dispose();
  });
});
