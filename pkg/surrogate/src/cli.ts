import { readFileSync, writeFileSync } from 'node:fs';
import yargs from 'yargs';
import { loadDataset } from './container';
import { caseTarget, caseWave } from './data';
import { evaluateModel } from './evaluate';
import { loadModel, saveModel } from './io';
import { SurrogateConfig, parseConfig } from './model';
import { searchHyperparams } from './search';
import { predict, train } from './train';

interface TrainArgs {
  dataset: string;
  out: string;
  config?: string;
  resume?: string;
  nC: number;
  nLstm: number;
  k: number;
  lLatent: number;
  r: number;
  epochs: number;
  batch: number;
  splits: string;
  seed: number;
  point: number;
}

interface SearchArgs {
  dataset: string;
  out: string;
  budget: number;
  epochs: number;
  batch: number;
  splits: string;
  seed: number;
  point: number;
}

interface PredictArgs {
  model: string;
  dataset: string;
  case: number;
  out?: string;
}

interface EvaluateArgs {
  model: string;
  dataset: string;
  baseline?: string;
  out?: string;
  point: number;
}

function parseSplits(text: string): [number, number, number] {
  const parts = text.split(',').map(Number);
  if (parts.length !== 3 || parts.some((p) => !Number.isFinite(p))) {
    throw new Error(`splits must be three comma-separated fractions, got ${text}`);
  }
  return parts as [number, number, number];
}

function configFromArgs(a: TrainArgs): SurrogateConfig {
  if (a.config) {
    const raw = JSON.parse(readFileSync(a.config, 'utf8'));
    return parseConfig({
      epochs: a.epochs,
      batch: a.batch,
      splits: parseSplits(a.splits),
      seed: a.seed,
      ...raw,
    });
  }
  return parseConfig({
    n_c: a.nC,
    n_LSTM: a.nLstm,
    k: a.k,
    L_latent: a.lLatent,
    r: a.r,
    epochs: a.epochs,
    batch: a.batch,
    splits: parseSplits(a.splits),
    seed: a.seed,
  });
}

export interface CliHandlers {
  train(a: TrainArgs): Promise<void>;
  search(a: SearchArgs): Promise<void>;
  predict(a: PredictArgs): Promise<void>;
  evaluate(a: EvaluateArgs): Promise<void>;
}

export const defaultHandlers: CliHandlers = {
  async train(a) {
    const dataset = loadDataset(a.dataset);
    const cfg = configFromArgs(a);
    const resumeFrom = a.resume ? await loadModel(a.resume) : undefined;
    const trained = await train(dataset, cfg, {
      point: a.point,
      log: (line) => console.log(line),
      resumeFrom,
    });
    await saveModel(a.out, trained);
    const last = trained.history[trained.history.length - 1];
    console.log(
      `saved ${a.out} after epoch ${last.epoch}; ` +
        `best val MAE ${Math.min(
          ...trained.history.map((h) => h.valMae ?? Infinity),
        ).toExponential(3)}`,
    );
  },

  async search(a) {
    const dataset = loadDataset(a.dataset);
    const result = await searchHyperparams(
      dataset,
      a.budget,
      {
        epochs: a.epochs,
        batch: a.batch,
        splits: parseSplits(a.splits),
        seed: a.seed,
      },
      { point: a.point, logPath: a.out, log: (line) => console.log(line) },
    );
    console.log(
      `best config: n_c=${result.best.n_c} n_LSTM=${result.best.n_LSTM} ` +
        `k=${result.best.k} L_latent=${result.best.L_latent} ` +
        `r=${result.best.r.toExponential(3)} ` +
        `(val MAE ${result.bestValMae.toExponential(3)}); log: ${a.out}`,
    );
  },

  async predict(a) {
    const trained = await loadModel(a.model);
    const dataset = loadDataset(a.dataset);
    const wave = caseWave(dataset, a.case);
    const pred = predict(trained, wave);
    const payload = {
      case_id: a.case,
      dt: dataset.dt,
      prediction: pred.map((row) => Array.from(row)),
      truth: caseTarget(dataset, a.case).map((row) => Array.from(row)),
    };
    if (a.out) {
      writeFileSync(a.out, JSON.stringify(payload));
      console.log(`wrote ${a.out}`);
    } else {
      console.log(JSON.stringify(payload));
    }
  },

  async evaluate(a) {
    const trained = await loadModel(a.model);
    const dataset = loadDataset(a.dataset);
    const baseline = a.baseline ? loadDataset(a.baseline) : null;
    const report = evaluateModel(trained, dataset, baseline, a.point);
    if (a.out) writeFileSync(a.out, JSON.stringify(report, null, 1));
    console.log(`test cases: ${report.testCases.join(', ')}`);
    console.log(`model MAE:    ${report.modelMae.toExponential(4)}`);
    if (report.baselineMae !== null) {
      console.log(`baseline MAE: ${report.baselineMae.toExponential(4)}`);
    }
    if (report.valMae !== null) {
      console.log(`best val MAE: ${report.valMae.toExponential(4)} (normalized)`);
    }
    for (const s of report.spectra) {
      console.log(
        `spectrum case ${s.caseId} comp ${s.component}: ` +
          `max rel err ${(100 * s.maxRelErr).toFixed(1)}%`,
      );
    }
  },
};

export function buildCli(argv: string[], handlers: CliHandlers = defaultHandlers) {
  return yargs(argv)
    .scriptName('surrogate')
    .command(
      'train',
      'train a surrogate on an exported dataset',
      (y) =>
        y
          .option('dataset', { type: 'string', demandOption: true })
          .option('out', { type: 'string', demandOption: true })
          .option('config', { type: 'string', describe: 'JSON file with model fields' })
          .option('resume', { type: 'string', describe: 'continue from a saved model' })
          .option('n-c', { type: 'number', default: 3 })
          .option('n-lstm', { type: 'number', default: 1 })
          .option('k', { type: 'number', default: 9 })
          .option('l-latent', { type: 'number', default: 128 })
          .option('r', { type: 'number', default: 2e-4 })
          .option('epochs', { type: 'number', default: 100 })
          .option('batch', { type: 'number', default: 16 })
          .option('splits', { type: 'string', default: '0.8,0.1,0.1' })
          .option('seed', { type: 'number', default: 0 })
          .option('point', { type: 'number', default: 0 }),
      (a) => handlers.train(a as unknown as TrainArgs),
    )
    .command(
      'search',
      'random hyperparameter search, logging every trial',
      (y) =>
        y
          .option('dataset', { type: 'string', demandOption: true })
          .option('out', { type: 'string', demandOption: true })
          .option('budget', { type: 'number', demandOption: true })
          .option('epochs', { type: 'number', default: 30 })
          .option('batch', { type: 'number', default: 16 })
          .option('splits', { type: 'string', default: '0.8,0.1,0.1' })
          .option('seed', { type: 'number', default: 0 })
          .option('point', { type: 'number', default: 0 }),
      (a) => handlers.search(a as unknown as SearchArgs),
    )
    .command(
      'predict',
      'predict the response waveform for one dataset case',
      (y) =>
        y
          .option('model', { type: 'string', demandOption: true })
          .option('dataset', { type: 'string', demandOption: true })
          .option('case', { type: 'number', demandOption: true })
          .option('out', { type: 'string' }),
      (a) => handlers.predict(a as unknown as PredictArgs),
    )
    .command(
      'evaluate',
      'score a model on held-out cases, optionally against a 1D baseline',
      (y) =>
        y
          .option('model', { type: 'string', demandOption: true })
          .option('dataset', { type: 'string', demandOption: true })
          .option('baseline', { type: 'string' })
          .option('out', { type: 'string' })
          .option('point', { type: 'number', default: 0 }),
      (a) => handlers.evaluate(a as unknown as EvaluateArgs),
    )
    .demandCommand(1)
    .strict()
    .fail((msg, err) => {
      console.error(msg ?? err.message);
      process.exit(2);
    })
    .help();
}

if (require.main === module) {
  buildCli(process.argv.slice(2)).parseAsync().catch((err: Error) => {
    console.error(`${err.name}: ${err.message}`);
    process.exit(1);
  });
}
