import { tf, ready } from './backend';
import { WaveDataset } from './container';
import {
  CaseSplit,
  Normalization,
  computeNormalization,
  modelArrays,
  mulberry32,
  shuffled,
  splitCases,
  waveToInput,
} from './data';
import { InputError, TrainingError } from './errors';
import { SurrogateConfig, buildModel, parseConfig } from './model';

export interface EpochRecord {
  epoch: number;
  trainMae: number;
  valMae: number | null;
}

export interface TrainedModel {
  model: tf.LayersModel;
  config: SurrogateConfig;
  normalization: Normalization;
  history: EpochRecord[];
  datasetFingerprint: string;
  split: CaseSplit;
  nt: number;
}

export interface TrainOptions {
  point?: number;
  log?: (line: string) => void;
  /** continue training this model instead of building a fresh one */
  resumeFrom?: TrainedModel;
}

function gatherEpoch(
  x: Float32Array,
  y: Float32Array,
  nt: number,
  perm: number[],
): { x: Float32Array; y: Float32Array } {
  const span = nt * 3;
  const xs = new Float32Array(perm.length * span);
  const ys = new Float32Array(perm.length * span);
  perm.forEach((src, dst) => {
    xs.set(x.subarray(src * span, (src + 1) * span), dst * span);
    ys.set(y.subarray(src * span, (src + 1) * span), dst * span);
  });
  return { x: xs, y: ys };
}

/**
 * Train a surrogate on the dataset under a seeded case split, minimizing
 * mean absolute error with Adam. Epoch order is shuffled by a seeded
 * generator so reruns are reproducible; the returned model carries the
 * weights of the best validation epoch.
 */
export async function train(
  dataset: WaveDataset,
  cfg: SurrogateConfig,
  opts: TrainOptions = {},
): Promise<TrainedModel> {
  parseConfig(cfg);
  await ready();
  const point = opts.point ?? 0;
  const log = opts.log ?? (() => {});

  const split = splitCases(dataset.caseIds, cfg.splits, cfg.seed);
  const norm = opts.resumeFrom?.normalization
    ?? computeNormalization(dataset, split.train, point);
  const trainArr = modelArrays(dataset, split.train, norm, point);
  const valArr = split.val.length ? modelArrays(dataset, split.val, norm, point) : null;

  const model = opts.resumeFrom?.model ?? buildModel(cfg, dataset.nt);
  model.compile({ optimizer: tf.train.adam(cfg.r), loss: 'meanAbsoluteError' });

  const nTrain = split.train.length;
  const valTensors = valArr
    ? {
        x: tf.tensor3d(valArr.x, [valArr.n, dataset.nt, 3]),
        y: tf.tensor3d(valArr.y, [valArr.n, dataset.nt, 3]),
      }
    : null;

  const history: EpochRecord[] = opts.resumeFrom?.history.slice() ?? [];
  const epoch0 = history.length;
  const rng = mulberry32((cfg.seed ^ 0x9e3779b9) >>> 0);
  for (let i = 0; i < epoch0; i++) shuffled(Array.from({ length: nTrain }, (_, j) => j), rng);
  const indices = Array.from({ length: nTrain }, (_, i) => i);
  let bestScore = Infinity;
  for (const rec of history) {
    const score = rec.valMae ?? rec.trainMae;
    if (score < bestScore) bestScore = score;
  }
  let bestWeights: tf.Tensor[] | null = null;

  try {
    for (let epoch = epoch0; epoch < epoch0 + cfg.epochs; epoch++) {
      const perm = shuffled(indices, rng);
      const ep = gatherEpoch(trainArr.x, trainArr.y, dataset.nt, perm);
      const xT = tf.tensor3d(ep.x, [nTrain, dataset.nt, 3]);
      const yT = tf.tensor3d(ep.y, [nTrain, dataset.nt, 3]);
      const fit = await model.fit(xT, yT, {
        epochs: 1,
        batchSize: cfg.batch,
        shuffle: false,
        verbose: 0,
      });
      xT.dispose();
      yT.dispose();
      const trainMae = Number(fit.history.loss[0]);

      let valMae: number | null = null;
      if (valTensors) {
        const out = model.evaluate(valTensors.x, valTensors.y, {
          batchSize: cfg.batch,
        }) as tf.Scalar;
        valMae = out.dataSync()[0];
        out.dispose();
      }
      if (!Number.isFinite(trainMae) || (valMae !== null && !Number.isFinite(valMae))) {
        throw new TrainingError(
          `non-finite loss at epoch ${epoch}: train=${trainMae} val=${valMae} ` +
            `(lr=${cfg.r}, batch=${cfg.batch}); lower the learning rate`,
        );
      }
      history.push({ epoch, trainMae, valMae });
      const score = valMae ?? trainMae;
      if (score < bestScore) {
        bestScore = score;
        if (bestWeights) bestWeights.forEach((w) => w.dispose());
        bestWeights = model.getWeights().map((w) => w.clone());
      }
      log(
        `epoch ${epoch}: train MAE ${trainMae.toExponential(3)}` +
          (valMae !== null ? ` val MAE ${valMae.toExponential(3)}` : ''),
      );
    }
    if (bestWeights) model.setWeights(bestWeights);
  } finally {
    if (bestWeights) bestWeights.forEach((w) => w.dispose());
    if (valTensors) {
      valTensors.x.dispose();
      valTensors.y.dispose();
    }
  }

  return {
    model,
    config: cfg,
    normalization: norm,
    history,
    datasetFingerprint: dataset.fingerprint,
    split,
    nt: dataset.nt,
  };
}

function denormalize(flat: Float32Array, nt: number, scale: [number, number, number]): Float64Array[] {
  const rows = [new Float64Array(nt), new Float64Array(nt), new Float64Array(nt)];
  for (let t = 0; t < nt; t++) {
    for (let c = 0; c < 3; c++) rows[c][t] = flat[t * 3 + c] * scale[c];
  }
  return rows;
}

/** Predict the [3][nt] response waveform for a batch of input waves. */
export function predictBatch(
  trained: TrainedModel,
  waves: ArrayLike<number>[][],
): Float64Array[][] {
  const nt = trained.nt;
  const x = new Float32Array(waves.length * nt * 3);
  waves.forEach((wave, i) => {
    x.set(waveToInput(wave, nt, trained.normalization), i * nt * 3);
  });
  const out = tf.tidy(() => {
    const xT = tf.tensor3d(x, [waves.length, nt, 3]);
    return trained.model.predict(xT, { batchSize: waves.length }) as tf.Tensor3D;
  });
  const flat = out.dataSync() as Float32Array;
  out.dispose();
  const results: Float64Array[][] = [];
  for (let i = 0; i < waves.length; i++) {
    const rows = denormalize(
      flat.subarray(i * nt * 3, (i + 1) * nt * 3) as Float32Array,
      nt,
      trained.normalization.target,
    );
    for (const row of rows) {
      for (let t = 0; t < nt; t++) {
        if (!Number.isFinite(row[t])) {
          throw new TrainingError(`non-finite prediction for batch element ${i}`);
        }
      }
    }
    results.push(rows);
  }
  return results;
}

/** Predict the [3][nt] response waveform for one input wave. */
export function predict(trained: TrainedModel, wave: ArrayLike<number>[]): Float64Array[] {
  if (wave.length !== 3) {
    throw new InputError(`wave must have 3 components, got ${wave.length}`);
  }
  return predictBatch(trained, [wave])[0];
}
