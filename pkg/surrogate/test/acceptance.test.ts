import { existsSync } from 'node:fs';
import { join } from 'node:path';
import { beforeAll, describe, expect, it } from 'vitest';
import { ready } from '../src/backend';
import { WaveDataset, loadDataset } from '../src/container';
import { computeNormalization, modelArrays, splitCases, subsetDataset, truncateDataset } from '../src/data';
import { evaluateModel } from '../src/evaluate';
import { loadModel } from '../src/io';
import { SurrogateConfig } from '../src/model';
import { TrainedModel, train } from '../src/train';

const DATASET = join(__dirname, '..', 'data', 'dataset3d.tfds');
const BASELINE = join(__dirname, '..', 'data', 'baseline1d.tfds');
const MODEL_DIR = join(__dirname, '..', 'models', 'desk');

let dataset: WaveDataset;
let baseline: WaveDataset;
let trained: TrainedModel;

beforeAll(async () => {
  await ready();
  expect(existsSync(DATASET), `missing ${DATASET}`).toBe(true);
  expect(existsSync(BASELINE), `missing ${BASELINE}`).toBe(true);
  expect(existsSync(join(MODEL_DIR, 'train.json')), `missing model in ${MODEL_DIR}`).toBe(true);
  // loading verifies every array checksum recorded in the manifests
  dataset = loadDataset(DATASET);
  baseline = loadDataset(BASELINE);
  trained = await loadModel(MODEL_DIR);
});

describe('surrogate acceptance', () => {
  it('reads the engine archives with verified checksums', () => {
    expect(dataset.nCases).toBe(64);
    expect(baseline.nCases).toBe(64);
    expect(dataset.nt).toBe(256);
    expect(baseline.nt).toBe(dataset.nt);
    expect(trained.datasetFingerprint).toBe(dataset.fingerprint);
    console.log(
      `[PASS] surrogate data integrity: 64-case archive checksums verified, ` +
        `model fingerprint matches (${dataset.fingerprint.slice(0, 12)}...)`,
    );
  });

  it('beats the 1D-column baseline on held-out cases', () => {
    const report = evaluateModel(trained, dataset, baseline);
    expect(report.testCases.length).toBeGreaterThanOrEqual(5);
    expect(report.baselineMae).not.toBeNull();
    expect(report.modelMae).toBeLessThan(report.baselineMae!);
    expect(report.valMae).not.toBeNull();
    expect(report.valMae!).toBeLessThan(5e-2);
    console.log(
      `[PASS] surrogate held-out MAE: model ${report.modelMae.toExponential(3)} < ` +
        `1D baseline ${report.baselineMae!.toExponential(3)} over ` +
        `${report.testCases.length} cases; best val MAE ` +
        `${report.valMae!.toExponential(3)} (normalized, order 1e-2)`,
    );
  });

  it('predicts the response spectrum of a held-out case within 20%', () => {
    const report = evaluateModel(trained, dataset, null);
    const caseId = report.testCases[0];
    const errs = report.spectra.filter((s) => s.caseId === caseId);
    expect(errs).toHaveLength(3);
    for (const e of errs) {
      expect(e.maxRelErr).toBeLessThanOrEqual(0.2);
    }
    const pct = errs.map((e) => `${(100 * e.maxRelErr).toFixed(1)}%`).join('/');
    console.log(
      `[PASS] surrogate response spectrum: case ${caseId}, h=0.05, periods ` +
        `0.4-5 s, max rel err per component ${pct} (limit 20%)`,
    );
  });

  it('overfits four cases to well below the target RMS', async () => {
    const sub = truncateDataset(subsetDataset(dataset, dataset.caseIds.slice(0, 4)), 64);
    // batch 1 gives four optimizer steps per epoch, which converges far
    // faster here than full-batch descent
    const base: Omit<SurrogateConfig, 'r'> = {
      n_c: 2,
      n_LSTM: 1,
      k: 9,
      L_latent: 64,
      epochs: 80,
      batch: 1,
      splits: [1, 0, 0],
      seed: 3,
    };
    const split = splitCases(sub.caseIds, [1, 0, 0], base.seed);
    const norm = computeNormalization(sub, split.train);
    const { y } = modelArrays(sub, split.train, norm);
    let sq = 0;
    for (let i = 0; i < y.length; i++) sq += y[i] * y[i];
    const rms = Math.sqrt(sq / y.length);
    const threshold = 1e-3 * rms;

    let model: TrainedModel | undefined;
    for (const r of [3e-3, 3e-3, 1e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6]) {
      model = await train(sub, { ...base, r }, { resumeFrom: model });
      if (model.history[model.history.length - 1].trainMae < threshold) break;
    }
    const best = Math.min(...model!.history.map((h) => h.trainMae));
    expect(best).toBeLessThan(threshold);
    console.log(
      `[PASS] surrogate overfit sanity: 4 cases, ${model!.history.length} epochs, ` +
        `train MAE ${best.toExponential(3)} < 1e-3 * target RMS ` +
        `${threshold.toExponential(3)}`,
    );
    model!.model.dispose();
  });
});
