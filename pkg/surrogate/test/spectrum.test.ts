import { describe, expect, it } from 'vitest';
import { differentiate, geomspace, velocityResponseSpectrum } from '../src/spectrum';

// spectra of two synthetic records, frozen from the engine-side reference
// implementation of the same oscillator integration
const PERIODS_A = [
  0.4, 0.6093661515780331, 0.9283177667225558, 1.4142135623730951, 2.154434690031884,
  3.2820989397273537, 5.0,
];
const SV_A = [
  0.06400202282959382, 0.1954494179591967, 1.3673497151812137, 0.49112558558099323,
  0.6979335401980281, 1.054492274462289, 0.6213888466689045,
];
const SV_B = [0.049513453015226264, 0.289246088951414, 0.5666649064995738];

describe('velocity response spectrum', () => {
  it('matches the reference implementation on a smooth record', () => {
    const dt = 0.04;
    const a = new Float64Array(256);
    for (let i = 0; i < a.length; i++) {
      const t = dt * i;
      a[i] = Math.sin(2 * Math.PI * 1.1 * t) + 0.5 * Math.sin(2 * Math.PI * 0.37 * t + 1.0);
    }
    const rs = velocityResponseSpectrum(a, dt, 0.05, PERIODS_A);
    for (let p = 0; p < PERIODS_A.length; p++) {
      expect(Math.abs(rs.sv[p] - SV_A[p]) / SV_A[p]).toBeLessThan(1e-9);
    }
    expect(rs.damping).toBe(0.05);
  });

  it('matches the reference when heavy sub-stepping kicks in', () => {
    const dt = 0.12;
    const a = new Float64Array(96);
    for (let i = 0; i < a.length; i++) {
      const t = dt * i;
      a[i] = Math.cos(2 * Math.PI * 0.55 * t) * Math.exp(-0.15 * t);
    }
    const rs = velocityResponseSpectrum(a, dt, 0.02, [0.3, 1.0, 3.0]);
    for (let p = 0; p < 3; p++) {
      expect(Math.abs(rs.sv[p] - SV_B[p]) / SV_B[p]).toBeLessThan(1e-9);
    }
  });

  it('approaches the resonant steady-state bound of a driven oscillator', () => {
    // at resonance, |v|_max -> a0 / (2 h omega) after the transient settles
    const T = 1.0;
    const h = 0.05;
    const dt = 0.005;
    const n = 12001;
    const a = new Float64Array(n);
    const omega = (2 * Math.PI) / T;
    for (let i = 0; i < n; i++) a[i] = Math.sin(omega * dt * i);
    const rs = velocityResponseSpectrum(a, dt, h, [T]);
    const bound = 1 / (2 * h * omega);
    expect(Math.abs(rs.sv[0] - bound) / bound).toBeLessThan(0.02);
  });

  it('rejects bad inputs', () => {
    const ok = [0, 0.1, 0.2, 0.1];
    expect(() => velocityResponseSpectrum([1], 0.01, 0.05, [1])).toThrow(/2 samples/);
    expect(() => velocityResponseSpectrum(ok, -0.01, 0.05, [1])).toThrow(/positive/);
    expect(() => velocityResponseSpectrum(ok, 0.01, 1.0, [1])).toThrow(/damping/);
    expect(() => velocityResponseSpectrum(ok, 0.01, 0.05, [])).toThrow(/periods/);
    expect(() => velocityResponseSpectrum(ok, 0.01, 0.05, [1, 0.5])).toThrow(/increasing/);
    expect(() => velocityResponseSpectrum([0, NaN, 0], 0.01, 0.05, [1])).toThrow(/finite/);
  });
});

describe('helpers', () => {
  it('geomspace hits both endpoints and grows monotonically', () => {
    const g = geomspace(0.4, 5.0, 40);
    expect(g[0]).toBe(0.4);
    expect(g[39]).toBe(5.0);
    for (let i = 1; i < 40; i++) expect(g[i]).toBeGreaterThan(g[i - 1]);
    const ratio = g[1] / g[0];
    expect(g[21] / g[20]).toBeCloseTo(ratio, 12);
  });

  it('differentiate recovers the slope of a linear ramp exactly', () => {
    const dt = 0.1;
    const x = Array.from({ length: 9 }, (_, i) => 2.5 * dt * i - 1.0);
    const d = differentiate(x, dt);
    for (const v of d) expect(v).toBeCloseTo(2.5, 12);
  });

  it('differentiate is second order on a sine wave interior', () => {
    const dt = 0.01;
    const n = 101;
    const omega = 2 * Math.PI;
    const x = Array.from({ length: n }, (_, i) => Math.sin(omega * dt * i));
    const d = differentiate(x, dt);
    // central-difference truncation bound: (dt^2 / 6) * max|f'''|
    const bound = 1.05 * (dt * dt / 6) * omega ** 3;
    for (let i = 1; i < n - 1; i++) {
      const exact = omega * Math.cos(omega * dt * i);
      expect(Math.abs(d[i] - exact)).toBeLessThan(bound);
    }
  });
});
