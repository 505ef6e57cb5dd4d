import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { beforeAll, describe, expect, it } from 'vitest';
import { ready } from '../src/backend';
import { loadModel, saveModel } from '../src/io';
import { SurrogateConfig, buildModel } from '../src/model';
import { TrainedModel, predict, predictBatch, train } from '../src/train';
import { learnableDataset } from './util';

const cfg: SurrogateConfig = {
  n_c: 2,
  n_LSTM: 1,
  k: 5,
  L_latent: 24,
  r: 1e-3,
  epochs: 2,
  batch: 4,
  splits: [0.75, 0.125, 0.125],
  seed: 9,
};

function freshModel(nt: number): TrainedModel {
  return {
    model: buildModel(cfg, nt),
    config: cfg,
    normalization: { input: [0.5, 1, 2], target: [2, 1, 0.25] },
    history: [],
    datasetFingerprint: 'none',
    split: { train: [], val: [], test: [] },
    nt,
  };
}

function randomWave(nt: number, seed: number): Float64Array[] {
  let s = seed;
  const next = () => {
    s = (s * 1103515245 + 12345) % 2147483648;
    return s / 2147483648 - 0.5;
  };
  return [0, 1, 2].map(() => Float64Array.from({ length: nt }, next));
}

beforeAll(async () => {
  await ready();
});

describe('prediction', () => {
  it('batch prediction equals per-case prediction', () => {
    const trained = freshModel(32);
    const waves = [randomWave(32, 1), randomWave(32, 2), randomWave(32, 3)];
    const batch = predictBatch(trained, waves);
    waves.forEach((wave, i) => {
      const single = predict(trained, wave);
      for (let c = 0; c < 3; c++) {
        expect(Array.from(single[c])).toEqual(Array.from(batch[i][c]));
      }
    });
    trained.model.dispose();
  });

  it('applies the stored normalization on both ends', () => {
    const trained = freshModel(32);
    const wave = randomWave(32, 7);
    const out = predict(trained, wave);
    expect(out).toHaveLength(3);
    for (const row of out) {
      expect(row).toHaveLength(32);
      for (const v of row) expect(Number.isFinite(v)).toBe(true);
    }
    // doubling the input scales means the network sees half the amplitude
    const up = {
      ...trained,
      normalization: {
        input: trained.normalization.input.map((s) => 2 * s) as [number, number, number],
        target: trained.normalization.target,
      },
    };
    const outUp = predict(up, wave);
    let differs = false;
    for (let c = 0; c < 3; c++) {
      for (let t = 0; t < 32; t++) {
        if (outUp[c][t] !== out[c][t]) differs = true;
      }
    }
    expect(differs).toBe(true);
    trained.model.dispose();
  });

  it('rejects waves that do not match the trained length', () => {
    const trained = freshModel(32);
    expect(() => predict(trained, randomWave(16, 1))).toThrow(/does not match/);
    expect(() => predict(trained, randomWave(32, 1).slice(0, 2))).toThrow(/3 components/);
    trained.model.dispose();
  });

  it('round-trips through save/load with identical outputs', async () => {
    const ds = learnableDataset(8, 32, 13);
    const trained = await train(ds, cfg);
    const wave = randomWave(32, 5);
    const before = predict(trained, wave);
    const dir = join(mkdtempSync(join(tmpdir(), 'model-')), 'saved');
    await saveModel(dir, trained);
    const loaded = await loadModel(dir);
    expect(loaded.config).toEqual(trained.config);
    expect(loaded.normalization).toEqual(trained.normalization);
    expect(loaded.split).toEqual(trained.split);
    expect(loaded.history).toEqual(trained.history);
    expect(loaded.datasetFingerprint).toBe(ds.fingerprint);
    const after = predict(loaded, wave);
    for (let c = 0; c < 3; c++) {
      expect(Array.from(after[c])).toEqual(Array.from(before[c]));
    }
    trained.model.dispose();
    loaded.model.dispose();
  });
});
