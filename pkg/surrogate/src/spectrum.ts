import { InputError } from './errors';

// keep >= this many integration steps per oscillator period (forcing is
// interpolated linearly onto the refined grid); bounded so absurdly short
// periods cannot explode the cost
const STEPS_PER_PERIOD = 40;
const MAX_SUBSTEPS = 64;

export interface ResponseSpectrum {
  periods: Float64Array;
  sv: Float64Array;
  damping: number;
}

/** Logarithmically spaced values from lo to hi inclusive. */
export function geomspace(lo: number, hi: number, n: number): Float64Array {
  if (!(lo > 0) || !(hi > lo) || n < 2) {
    throw new InputError(`bad geometric range (${lo}, ${hi}, ${n})`);
  }
  const out = new Float64Array(n);
  const step = Math.log(hi / lo) / (n - 1);
  for (let i = 0; i < n; i++) out[i] = lo * Math.exp(step * i);
  out[n - 1] = hi;
  return out;
}

/** Central-difference time derivative, one-sided at the ends. */
export function differentiate(x: ArrayLike<number>, dt: number): Float64Array {
  const n = x.length;
  if (n < 2) throw new InputError(`need at least 2 samples, got ${n}`);
  if (!(dt > 0)) throw new InputError(`time step must be positive, got ${dt}`);
  const out = new Float64Array(n);
  out[0] = (x[1] - x[0]) / dt;
  for (let i = 1; i < n - 1; i++) out[i] = (x[i + 1] - x[i - 1]) / (2 * dt);
  out[n - 1] = (x[n - 1] - x[n - 2]) / dt;
  return out;
}

/**
 * Max relative velocity of damped SDOF oscillators under base acceleration,
 * via average-acceleration Newmark per period.
 *
 * Oscillators shorter than the record's sampling are sub-stepped, so the
 * spectrum is converged for every period down to a few input samples.
 */
export function velocityResponseSpectrum(
  accel: ArrayLike<number>,
  dt: number,
  h: number,
  periods: ArrayLike<number>,
): ResponseSpectrum {
  let aG = Float64Array.from(accel as ArrayLike<number>);
  if (aG.length < 2) {
    throw new InputError(`need at least 2 samples, got ${aG.length}`);
  }
  for (let i = 0; i < aG.length; i++) {
    if (!Number.isFinite(aG[i])) {
      throw new InputError('acceleration series contains non-finite samples');
    }
  }
  if (!(dt > 0)) throw new InputError(`time step must be positive, got ${dt}`);
  if (!(h >= 0 && h < 1)) {
    throw new InputError(`damping ratio must be in [0, 1), got ${h}`);
  }
  const np = periods.length;
  if (np === 0 || periods[0] <= 0) {
    throw new InputError('periods must be positive');
  }
  for (let i = 1; i < np; i++) {
    if (!(periods[i] > periods[i - 1])) {
      throw new InputError('periods must be strictly increasing');
    }
  }

  const m = Math.min(
    MAX_SUBSTEPS,
    Math.max(1, Math.ceil((STEPS_PER_PERIOD * dt) / periods[0])),
  );
  if (m > 1) {
    const n = aG.length;
    const fine = new Float64Array(m * (n - 1) + 1);
    for (let i = 0; i < n - 1; i++) {
      const slope = (aG[i + 1] - aG[i]) / m;
      for (let s = 0; s < m; s++) fine[i * m + s] = aG[i] + slope * s;
    }
    fine[fine.length - 1] = aG[n - 1];
    aG = fine;
    dt = dt / m;
  }

  const sv = new Float64Array(np);
  const dt2 = 4 / (dt * dt);
  for (let p = 0; p < np; p++) {
    const omega = (2 * Math.PI) / periods[p];
    const c = 2 * h * omega;
    const k = omega * omega;
    const aLhs = dt2 + c * (2 / dt) + k;
    let u = 0;
    let v = 0;
    let a = 0;
    let peak = 0;
    for (let i = 1; i < aG.length; i++) {
      const f = -aG[i];
      const rhs = f + dt2 * u + (4 / dt) * v + a + c * ((2 / dt) * u + v);
      const un = rhs / aLhs;
      const an = dt2 * (un - u) - (4 / dt) * v - a;
      v = v + 0.5 * dt * (a + an);
      u = un;
      a = an;
      const av = Math.abs(v);
      if (av > peak) peak = av;
    }
    sv[p] = peak;
  }
  return { periods: Float64Array.from(periods as ArrayLike<number>), sv, damping: h };
}
