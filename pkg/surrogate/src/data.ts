import { InputError } from './errors';
import { WaveDataset, fingerprintArrays } from './container';

/** Deterministic 32-bit PRNG; good enough for splits and search sampling. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffled<T>(items: T[], rng: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

export interface CaseSplit {
  train: number[];
  val: number[];
  test: number[];
}

/**
 * Seeded split of case ids into disjoint train/val/test sets. Ids are
 * canonically sorted before shuffling so the split depends only on the id
 * set, the fractions and the seed.
 */
export function splitCases(
  caseIds: number[],
  fractions: [number, number, number],
  seed: number,
): CaseSplit {
  const [ft, fv, fe] = fractions;
  if (ft <= 0 || fv < 0 || fe < 0 || Math.abs(ft + fv + fe - 1) > 1e-9) {
    throw new InputError(`split fractions must be >= 0 and sum to 1, got ${fractions}`);
  }
  const ids = Array.from(new Set(caseIds)).sort((a, b) => a - b);
  if (ids.length !== caseIds.length) {
    throw new InputError('case ids must be unique');
  }
  const order = shuffled(ids, mulberry32(seed));
  const n = order.length;
  const nTrain = Math.max(1, Math.round(ft * n));
  const nVal = Math.min(Math.round(fv * n), n - nTrain);
  return {
    train: order.slice(0, nTrain).sort((a, b) => a - b),
    val: order.slice(nTrain, nTrain + nVal).sort((a, b) => a - b),
    test: order.slice(nTrain + nVal).sort((a, b) => a - b),
  };
}

/** Per-component scale factors: max |amplitude| over the training cases. */
export interface Normalization {
  input: [number, number, number];
  target: [number, number, number];
}

function caseIndex(ds: WaveDataset, caseId: number): number {
  const idx = ds.caseIds.indexOf(caseId);
  if (idx < 0) throw new InputError(`case ${caseId} not in dataset`);
  return idx;
}

/** Copy one case's input wave as [3][nt] rows. */
export function caseWave(ds: WaveDataset, caseId: number): Float64Array[] {
  const i = caseIndex(ds, caseId);
  const rows: Float64Array[] = [];
  for (let c = 0; c < 3; c++) {
    const base = (i * 3 + c) * ds.nt;
    rows.push(ds.inputs.slice(base, base + ds.nt));
  }
  return rows;
}

/** Copy one case's response at an observation point as [3][nt] rows. */
export function caseTarget(ds: WaveDataset, caseId: number, point = 0): Float64Array[] {
  const i = caseIndex(ds, caseId);
  if (point < 0 || point >= ds.nPoints) {
    throw new InputError(`observation point ${point} out of range`);
  }
  const rows: Float64Array[] = [];
  for (let c = 0; c < 3; c++) {
    const base = ((i * ds.nPoints + point) * 3 + c) * ds.nt;
    rows.push(ds.targets.slice(base, base + ds.nt));
  }
  return rows;
}

/** Max |amplitude| per component over the given training cases. */
export function computeNormalization(
  ds: WaveDataset,
  trainIds: number[],
  point = 0,
): Normalization {
  const input: [number, number, number] = [0, 0, 0];
  const target: [number, number, number] = [0, 0, 0];
  for (const id of trainIds) {
    const w = caseWave(ds, id);
    const y = caseTarget(ds, id, point);
    for (let c = 0; c < 3; c++) {
      for (let t = 0; t < ds.nt; t++) {
        const aw = Math.abs(w[c][t]);
        if (aw > input[c]) input[c] = aw;
        const ay = Math.abs(y[c][t]);
        if (ay > target[c]) target[c] = ay;
      }
    }
  }
  for (let c = 0; c < 3; c++) {
    if (input[c] === 0) input[c] = 1;
    if (target[c] === 0) target[c] = 1;
  }
  return { input, target };
}

/**
 * Normalized model arrays for a list of cases: channel-last float32 buffers
 * of shape [n, nt, 3], matching the network's input/output layout.
 */
export function modelArrays(
  ds: WaveDataset,
  ids: number[],
  norm: Normalization,
  point = 0,
): { x: Float32Array; y: Float32Array; n: number; nt: number } {
  const nt = ds.nt;
  const x = new Float32Array(ids.length * nt * 3);
  const y = new Float32Array(ids.length * nt * 3);
  ids.forEach((id, row) => {
    const w = caseWave(ds, id);
    const r = caseTarget(ds, id, point);
    for (let t = 0; t < nt; t++) {
      for (let c = 0; c < 3; c++) {
        const at = (row * nt + t) * 3 + c;
        x[at] = w[c][t] / norm.input[c];
        y[at] = r[c][t] / norm.target[c];
      }
    }
  });
  return { x, y, n: ids.length, nt };
}

/** Dataset restricted to the given cases, in the given order. */
export function subsetDataset(ds: WaveDataset, ids: number[]): WaveDataset {
  const nt = ds.nt;
  const inputs = new Float64Array(ids.length * 3 * nt);
  const targets = new Float64Array(ids.length * ds.nPoints * 3 * nt);
  ids.forEach((id, row) => {
    const i = caseIndex(ds, id);
    inputs.set(ds.inputs.subarray(i * 3 * nt, (i + 1) * 3 * nt), row * 3 * nt);
    const span = ds.nPoints * 3 * nt;
    targets.set(ds.targets.subarray(i * span, (i + 1) * span), row * span);
  });
  return {
    ...ds,
    nCases: ids.length,
    caseIds: ids.slice(),
    inputs,
    targets,
    fingerprint: fingerprintArrays(inputs, targets),
  };
}

/** Dataset truncated to the first nt samples of every record. */
export function truncateDataset(ds: WaveDataset, nt: number): WaveDataset {
  if (nt > ds.nt || nt < 2) {
    throw new InputError(`cannot truncate length-${ds.nt} records to ${nt}`);
  }
  const inputs = new Float64Array(ds.nCases * 3 * nt);
  const targets = new Float64Array(ds.nCases * ds.nPoints * 3 * nt);
  for (let i = 0; i < ds.nCases * 3; i++) {
    inputs.set(ds.inputs.subarray(i * ds.nt, i * ds.nt + nt), i * nt);
  }
  for (let i = 0; i < ds.nCases * ds.nPoints * 3; i++) {
    targets.set(ds.targets.subarray(i * ds.nt, i * ds.nt + nt), i * nt);
  }
  return {
    ...ds,
    nt,
    inputs,
    targets,
    fingerprint: fingerprintArrays(inputs, targets),
  };
}

/** Pack [3][nt] rows into a normalized channel-last [1, nt, 3] buffer. */
export function waveToInput(
  wave: ArrayLike<number>[],
  nt: number,
  norm: Normalization,
): Float32Array {
  if (wave.length !== 3) {
    throw new InputError(`wave must have 3 components, got ${wave.length}`);
  }
  for (const row of wave) {
    if (row.length !== nt) {
      throw new InputError(`wave length ${row.length} does not match model length ${nt}`);
    }
  }
  const x = new Float32Array(nt * 3);
  for (let t = 0; t < nt; t++) {
    for (let c = 0; c < 3; c++) x[t * 3 + c] = wave[c][t] / norm.input[c];
  }
  return x;
}
