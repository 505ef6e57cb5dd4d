import { beforeAll, describe, expect, it } from 'vitest';
import { ready } from '../src/backend';
import { fingerprintArrays } from '../src/container';
import { SurrogateConfig } from '../src/model';
import { train } from '../src/train';
import { learnableDataset, syntheticDataset } from './util';

const cfg: SurrogateConfig = {
  n_c: 2,
  n_LSTM: 1,
  k: 3,
  L_latent: 16,
  r: 1e-3,
  epochs: 3,
  batch: 2,
  splits: [0.5, 0.25, 0.25],
  seed: 42,
};

beforeAll(async () => {
  await ready();
});

describe('training loop', () => {
  it('is deterministic under a fixed seed', async () => {
    const ds = syntheticDataset(6, 32, 17);
    const a = await train(ds, cfg);
    const b = await train(ds, cfg);
    expect(a.history).toEqual(b.history);
    expect(a.split).toEqual(b.split);
    expect(a.normalization).toEqual(b.normalization);
    const wa = a.model.getWeights().map((w) => Array.from(w.dataSync()));
    const wb = b.model.getWeights().map((w) => Array.from(w.dataSync()));
    expect(wa).toEqual(wb);
    a.model.dispose();
    b.model.dispose();
  });

  it('records one train/val entry per epoch and keeps the best-val weights', async () => {
    const ds = learnableDataset(12, 32, 5);
    const trained = await train(ds, { ...cfg, epochs: 10 });
    expect(trained.history).toHaveLength(10);
    trained.history.forEach((h, i) => {
      expect(h.epoch).toBe(i);
      expect(Number.isFinite(h.trainMae)).toBe(true);
      expect(h.valMae).not.toBeNull();
    });
    expect(trained.datasetFingerprint).toBe(ds.fingerprint);
    // the model must actually learn the linear response
    const first = trained.history[0].valMae!;
    const best = Math.min(...trained.history.map((h) => h.valMae!));
    expect(best).toBeLessThan(first);
    trained.model.dispose();
  });

  it('resumes from a previous model with a contiguous history', async () => {
    const ds = learnableDataset(8, 32, 6);
    const first = await train(ds, { ...cfg, epochs: 4 });
    const resumed = await train(ds, { ...cfg, epochs: 3 }, { resumeFrom: first });
    expect(resumed.history).toHaveLength(7);
    expect(resumed.history.map((h) => h.epoch)).toEqual([0, 1, 2, 3, 4, 5, 6]);
    expect(resumed.history.slice(0, 4)).toEqual(first.history);
    resumed.model.dispose();
  });

  it('aborts on non-finite loss with diagnostics', async () => {
    const ds = syntheticDataset(6, 32, 23);
    // poison every case so the training split cannot avoid the NaN
    for (let i = 0; i < ds.nCases; i++) ds.targets[i * 3 * ds.nt + 5] = NaN;
    ds.fingerprint = fingerprintArrays(ds.inputs, ds.targets);
    await expect(train(ds, cfg)).rejects.toThrow(/non-finite loss at epoch 0/);
  });
});
