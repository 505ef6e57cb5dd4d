import { writeFileSync } from 'node:fs';
import { WaveDataset } from './container';
import { mulberry32 } from './data';
import { InputError, TrainingError } from './errors';
import { SEARCH_SPACE, SurrogateConfig } from './model';
import { TrainedModel, train } from './train';

export interface TrialRecord {
  trial: number;
  config: SurrogateConfig;
  valMae: number | null;
  status: 'ok' | 'failed';
  error?: string;
}

export interface SearchResult {
  best: SurrogateConfig;
  bestValMae: number;
  trials: TrialRecord[];
}

export interface SearchOptions {
  point?: number;
  /** where to persist the full trial log as JSON */
  logPath?: string;
  log?: (line: string) => void;
  /** injectable trainer, for tests */
  trainFn?: (ds: WaveDataset, cfg: SurrogateConfig) => Promise<TrainedModel>;
}

function pick<T>(values: T[], rng: () => number): T {
  return values[Math.floor(rng() * values.length)];
}

/** Uniform sample of the architecture space; learning rate is log-uniform. */
export function sampleConfig(
  base: Pick<SurrogateConfig, 'epochs' | 'batch' | 'splits' | 'seed'>,
  nt: number,
  rng: () => number,
): SurrogateConfig {
  const depths = SEARCH_SPACE.n_c.filter((d) => nt % 2 ** d === 0);
  if (!depths.length) {
    throw new InputError(`record length ${nt} fits no encoder depth in the space`);
  }
  const [lo, hi] = SEARCH_SPACE.rRange;
  return {
    ...base,
    n_c: pick(depths, rng),
    n_LSTM: pick(SEARCH_SPACE.n_LSTM, rng),
    k: pick(SEARCH_SPACE.k, rng),
    L_latent: pick(SEARCH_SPACE.L_latent, rng),
    r: Math.exp(Math.log(lo) + rng() * Math.log(hi / lo)),
  };
}

/**
 * Random search over the architecture/learning-rate space: train one model
 * per trial, rank by best validation MAE, persist the full trial log, and
 * return the winning config.
 */
export async function searchHyperparams(
  dataset: WaveDataset,
  budget: number,
  base: Pick<SurrogateConfig, 'epochs' | 'batch' | 'splits' | 'seed'>,
  opts: SearchOptions = {},
): Promise<SearchResult> {
  if (!(Number.isInteger(budget) && budget >= 1)) {
    throw new InputError(`search budget must be a positive integer, got ${budget}`);
  }
  if (!(base.splits[1] > 0)) {
    throw new InputError('search needs a nonzero validation fraction to rank trials');
  }
  const log = opts.log ?? (() => {});
  const trainFn = opts.trainFn ?? ((ds, cfg) => train(ds, cfg, { point: opts.point }));
  const rng = mulberry32((base.seed * 2654435761) >>> 0);

  const trials: TrialRecord[] = [];
  for (let t = 0; t < budget; t++) {
    const cfg = sampleConfig(base, dataset.nt, rng);
    log(
      `trial ${t}: n_c=${cfg.n_c} n_LSTM=${cfg.n_LSTM} k=${cfg.k} ` +
        `L_latent=${cfg.L_latent} r=${cfg.r.toExponential(2)}`,
    );
    try {
      const trained = await trainFn(dataset, cfg);
      const vals = trained.history
        .map((h) => h.valMae)
        .filter((v): v is number => v !== null);
      if (!vals.length) throw new TrainingError('trial recorded no validation metric');
      const valMae = Math.min(...vals);
      trials.push({ trial: t, config: cfg, valMae, status: 'ok' });
      trained.model.dispose();
      log(`trial ${t}: val MAE ${valMae.toExponential(3)}`);
    } catch (e) {
      trials.push({
        trial: t,
        config: cfg,
        valMae: null,
        status: 'failed',
        error: (e as Error).message,
      });
      log(`trial ${t}: failed (${(e as Error).message})`);
    }
  }

  const ok = trials.filter((t) => t.status === 'ok');
  const result = ok.length
    ? {
        best: ok.reduce((a, b) => (b.valMae! < a.valMae! ? b : a)).config,
        bestValMae: Math.min(...ok.map((t) => t.valMae!)),
        trials,
      }
    : null;
  if (opts.logPath) {
    writeFileSync(
      opts.logPath,
      JSON.stringify(
        {
          budget,
          seed: base.seed,
          space: SEARCH_SPACE,
          trials,
          best: result ? { config: result.best, valMae: result.bestValMae } : null,
        },
        null,
        1,
      ),
    );
  }
  if (!result) {
    throw new TrainingError(
      `all ${budget} search trials failed; last error: ${trials[trials.length - 1].error}`,
    );
  }
  return result;
}
