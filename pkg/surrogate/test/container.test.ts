import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';
import { loadDataset, readContainer } from '../src/container';

const FIXTURE = join(__dirname, 'fixtures', 'tiny.tfds');

// values frozen from the dataset producer when the fixture was written
const FP = '382159666ead02df3550705b82a402fd3a56d8f17cf3ca95bf3e74c426943f11';

describe('container reader', () => {
  it('reads a producer-written container and verifies checksums', () => {
    const { meta, arrays } = readContainer(FIXTURE, 'TFDS1');
    expect(meta.dt).toBe(0.04);
    expect(meta.strategy).toBe('slow-only');
    const inputs = arrays.get('inputs')!;
    expect(inputs.shape).toEqual([2, 3, 8]);
    expect(inputs.dtype).toBe('<f8');
    const data = inputs.data as Float64Array;
    expect(data[0]).toBe(-1.4238250364546312);
    expect(data[1]).toBe(1.2637284581291104);
    expect(data[2]).toBe(-0.8706617379590857);
    expect(data[2 * 3 * 8 - 1]).toBe(1.3470777642972676);
    const iters = arrays.get('iters')!;
    expect(iters.dtype).toBe('<i8');
    expect(Array.from(iters.data as BigInt64Array)).toEqual([0n, 1n, 2n, 3n, 4n, 5n]);
  });

  it('loads the dataset view with a stable fingerprint', () => {
    const ds = loadDataset(FIXTURE);
    expect(ds.nCases).toBe(2);
    expect(ds.nPoints).toBe(1);
    expect(ds.nt).toBe(8);
    expect(ds.caseIds).toEqual([0, 1]);
    expect(ds.fingerprint).toBe(FP);
    // targets flattened [case, point, comp, t]
    const base = ((1 * 1 + 0) * 3 + 2) * 8;
    expect(ds.targets[base]).toBe(0.7478729421405462);
    expect(ds.targets[base + 1]).toBe(0.9808759091945427);
    expect(ds.targets[base + 2]).toBe(-0.1104186881258106);
  });

  it('rejects a flipped payload byte as a checksum mismatch', () => {
    const dir = mkdtempSync(join(tmpdir(), 'container-'));
    const raw = Buffer.from(readFileSync(FIXTURE));
    raw[raw.length - 3] ^= 0xff;
    const bad = join(dir, 'bad.tfds');
    writeFileSync(bad, raw);
    expect(() => readContainer(bad, 'TFDS1')).toThrow(/checksum mismatch/);
    expect(() => readContainer(bad, 'TFDS1', false)).not.toThrow();
  });

  it('rejects a wrong magic', () => {
    expect(() => readContainer(FIXTURE, 'TFCR1')).toThrow(/bad magic/);
  });

  it('rejects truncated files', () => {
    const dir = mkdtempSync(join(tmpdir(), 'container-'));
    const raw = readFileSync(FIXTURE);
    const cut = join(dir, 'cut.tfds');
    writeFileSync(cut, raw.subarray(0, raw.length - 16));
    expect(() => readContainer(cut, 'TFDS1')).toThrow(/past end of file/);
  });
});
