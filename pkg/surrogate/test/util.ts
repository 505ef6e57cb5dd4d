import { WaveDataset, fingerprintArrays } from '../src/container';
import { mulberry32 } from '../src/data';

/** Deterministic random dataset for unit tests; no file involved. */
export function syntheticDataset(nCases: number, nt: number, seed = 1): WaveDataset {
  const rng = mulberry32(seed);
  const inputs = new Float64Array(nCases * 3 * nt);
  const targets = new Float64Array(nCases * 3 * nt);
  for (let i = 0; i < inputs.length; i++) inputs[i] = 2 * rng() - 1;
  for (let i = 0; i < targets.length; i++) targets[i] = 2 * rng() - 1;
  return {
    dt: 0.04,
    nt,
    nCases,
    nPoints: 1,
    caseIds: Array.from({ length: nCases }, (_, i) => i),
    inputs,
    targets,
    fingerprint: fingerprintArrays(inputs, targets),
  };
}

/**
 * A dataset whose targets are a fixed linear response of the inputs
 * (component mix plus a lagged echo), so a surrogate can actually learn it.
 */
export function learnableDataset(nCases: number, nt: number, seed = 1): WaveDataset {
  const ds = syntheticDataset(nCases, nt, seed);
  const mix = [
    [1.1, 0.3, 0.0],
    [-0.2, 0.9, 0.4],
    [0.1, 0.0, 0.7],
  ];
  const lag = 3;
  for (let i = 0; i < nCases; i++) {
    for (let c = 0; c < 3; c++) {
      const out = ds.targets.subarray((i * 3 + c) * nt, (i * 3 + c + 1) * nt);
      for (let t = 0; t < nt; t++) {
        let v = 0;
        for (let s = 0; s < 3; s++) {
          const row = ds.inputs.subarray((i * 3 + s) * nt, (i * 3 + s + 1) * nt);
          v += mix[c][s] * row[t];
          if (t >= lag) v += 0.5 * mix[c][s] * row[t - lag];
        }
        out[t] = v;
      }
    }
  }
  ds.fingerprint = fingerprintArrays(ds.inputs, ds.targets);
  return ds;
}
