import { WaveDataset } from './container';
import { caseTarget, caseWave } from './data';
import { InputError } from './errors';
import { differentiate, geomspace, velocityResponseSpectrum } from './spectrum';
import { TrainedModel, predictBatch } from './train';

export const SPECTRA_BAND: [number, number] = [0.4, 5.0];
export const SPECTRA_DAMPING = 0.05;
const SPECTRA_POINTS = 40;

export interface SpectraError {
  caseId: number;
  component: number;
  /** max over the period band of |sv_pred - sv_true| / sv_true */
  maxRelErr: number;
}

export interface EvaluationReport {
  testCases: number[];
  /** physical-unit MAE over test cases, all components and samples */
  modelMae: number;
  perCaseModelMae: number[];
  /** same measure for the 1D-column reference waveforms, when given */
  baselineMae: number | null;
  perCaseBaselineMae: number[] | null;
  /** best recorded validation MAE (normalized units) from training */
  valMae: number | null;
  spectra: SpectraError[];
  spectraBand: [number, number];
  spectraDamping: number;
}

function waveformMae(a: Float64Array[], b: Float64Array[]): number {
  let acc = 0;
  let n = 0;
  for (let c = 0; c < 3; c++) {
    for (let t = 0; t < a[c].length; t++) {
      acc += Math.abs(a[c][t] - b[c][t]);
      n++;
    }
  }
  return acc / n;
}

function spectrumOf(v: Float64Array, dt: number, periods: Float64Array): Float64Array {
  return velocityResponseSpectrum(differentiate(v, dt), dt, SPECTRA_DAMPING, periods).sv;
}

/**
 * Held-out evaluation: waveform MAE of the surrogate (and optionally of a
 * 1D-column reference) against the 3D-solver truth, plus per-component
 * velocity-response-spectrum errors over the 0.4-5 s period band.
 *
 * When the dataset is the one the model was trained on, only its held-out
 * test cases are scored; a different dataset is scored in full.
 */
export function evaluateModel(
  trained: TrainedModel,
  dataset: WaveDataset,
  baseline: WaveDataset | null = null,
  point = 0,
): EvaluationReport {
  if (dataset.nt !== trained.nt) {
    throw new InputError(
      `dataset record length ${dataset.nt} does not match model length ${trained.nt}`,
    );
  }
  const sameData = dataset.fingerprint === trained.datasetFingerprint;
  const testCases = sameData
    ? trained.split.test.slice()
    : dataset.caseIds.slice().sort((a, b) => a - b);
  if (!testCases.length) {
    throw new InputError('no held-out cases to evaluate');
  }
  if (baseline) {
    if (baseline.nt !== dataset.nt || baseline.dt !== dataset.dt) {
      throw new InputError('baseline sampling does not match the dataset');
    }
    for (const id of testCases) {
      if (!baseline.caseIds.includes(id)) {
        throw new InputError(`baseline is missing case ${id}`);
      }
    }
  }

  const waves = testCases.map((id) => caseWave(dataset, id));
  const preds = predictBatch(trained, waves);
  const periods = geomspace(SPECTRA_BAND[0], SPECTRA_BAND[1], SPECTRA_POINTS);

  const perCaseModelMae: number[] = [];
  const perCaseBaselineMae: number[] = [];
  const spectra: SpectraError[] = [];
  testCases.forEach((id, i) => {
    const truth = caseTarget(dataset, id, point);
    perCaseModelMae.push(waveformMae(preds[i], truth));
    if (baseline) {
      perCaseBaselineMae.push(waveformMae(caseTarget(baseline, id, 0), truth));
    }
    for (let c = 0; c < 3; c++) {
      const svTrue = spectrumOf(truth[c], dataset.dt, periods);
      const svPred = spectrumOf(preds[i][c], dataset.dt, periods);
      let worst = 0;
      for (let p = 0; p < periods.length; p++) {
        const rel = Math.abs(svPred[p] - svTrue[p]) / svTrue[p];
        if (rel > worst) worst = rel;
      }
      spectra.push({ caseId: id, component: c, maxRelErr: worst });
    }
  });

  const mean = (xs: number[]) => xs.reduce((a, b) => a + b, 0) / xs.length;
  const valHistory = trained.history
    .map((h) => h.valMae)
    .filter((v): v is number => v !== null);
  return {
    testCases,
    modelMae: mean(perCaseModelMae),
    perCaseModelMae,
    baselineMae: baseline ? mean(perCaseBaselineMae) : null,
    perCaseBaselineMae: baseline ? perCaseBaselineMae : null,
    valMae: valHistory.length ? Math.min(...valHistory) : null,
    spectra,
    spectraBand: SPECTRA_BAND,
    spectraDamping: SPECTRA_DAMPING,
  };
}
