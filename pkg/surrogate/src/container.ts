import { createHash } from 'node:crypto';
import { readFileSync } from 'node:fs';

/** One array payload decoded from a container file. */
export interface StoredArray {
  dtype: string;
  shape: number[];
  data: Float64Array | Float32Array | BigInt64Array;
}

export interface Container {
  meta: Record<string, unknown>;
  arrays: Map<string, StoredArray>;
}

interface ManifestEntry {
  name: string;
  dtype: string;
  shape: number[];
  nbytes: number;
  sha256: string;
  offset: number;
}

const MAGIC_LEN = 8;

function decodePayload(dtype: string, buf: Buffer): StoredArray['data'] {
  // Payloads are little-endian C-order; Node buffers share that layout, but
  // the typed-array view needs an aligned copy of the slice.
  const copy = Buffer.from(buf);
  const ab = copy.buffer.slice(copy.byteOffset, copy.byteOffset + copy.length);
  switch (dtype) {
    case '<f8':
      return new Float64Array(ab);
    case '<f4':
      return new Float32Array(ab);
    case '<i8':
      return new BigInt64Array(ab);
    default:
      throw new Error(`unsupported array dtype ${dtype}`);
  }
}

/**
 * Read a binary container file: magic header, JSON manifest, and raw
 * array payloads whose checksums are verified before decoding.
 */
export function readContainer(path: string, magic: string, verify = true): Container {
  const buf = readFileSync(path);
  if (buf.length < MAGIC_LEN + 8) {
    throw new Error(`${path}: truncated container`);
  }
  const got = buf.subarray(0, MAGIC_LEN).toString('latin1').replace(/\0+$/, '');
  if (got !== magic) {
    throw new Error(`${path}: bad magic ${JSON.stringify(got)}, expected ${magic}`);
  }
  const manifestLen = Number(buf.readBigUInt64LE(MAGIC_LEN));
  const manifestEnd = MAGIC_LEN + 8 + manifestLen;
  if (manifestEnd > buf.length) {
    throw new Error(`${path}: manifest extends past end of file`);
  }
  const manifest = JSON.parse(buf.subarray(MAGIC_LEN + 8, manifestEnd).toString('utf8')) as {
    meta: Record<string, unknown>;
    arrays: ManifestEntry[];
  };

  const arrays = new Map<string, StoredArray>();
  for (const entry of manifest.arrays) {
    const end = entry.offset + entry.nbytes;
    if (end > buf.length) {
      throw new Error(`${path}: array ${entry.name} extends past end of file`);
    }
    const payload = buf.subarray(entry.offset, end);
    if (verify) {
      const digest = createHash('sha256').update(payload).digest('hex');
      if (digest !== entry.sha256) {
        throw new Error(`${path}: checksum mismatch for array ${entry.name}`);
      }
    }
    arrays.set(entry.name, {
      dtype: entry.dtype,
      shape: entry.shape,
      data: decodePayload(entry.dtype, payload),
    });
  }
  return { meta: manifest.meta, arrays };
}

export const DATASET_MAGIC = 'TFDS1';

/** A waveform dataset: input ground motions and simulated responses. */
export interface WaveDataset {
  dt: number;
  nt: number;
  nCases: number;
  nPoints: number;
  caseIds: number[];
  /** flattened [nCases, 3, nt] */
  inputs: Float64Array;
  /** flattened [nCases, nPoints, 3, nt] */
  targets: Float64Array;
  /** hex digest over both payloads, for provenance checks */
  fingerprint: string;
}

/** Hex digest over the raw input/target payloads of a dataset. */
export function fingerprintArrays(inputs: Float64Array, targets: Float64Array): string {
  const hash = createHash('sha256');
  hash.update(Buffer.from(inputs.buffer, inputs.byteOffset, inputs.byteLength));
  hash.update(Buffer.from(targets.buffer, targets.byteOffset, targets.byteLength));
  return hash.digest('hex');
}

/** Load an exported simulation dataset and fingerprint its payloads. */
export function loadDataset(path: string): WaveDataset {
  const { meta, arrays } = readContainer(path, DATASET_MAGIC);
  const inputs = arrays.get('inputs');
  const targets = arrays.get('targets');
  if (!inputs || !targets) {
    throw new Error(`${path}: dataset must contain inputs and targets arrays`);
  }
  if (inputs.dtype !== '<f8' || targets.dtype !== '<f8') {
    throw new Error(`${path}: dataset arrays must be float64`);
  }
  const [nCases, nComp, nt] = inputs.shape;
  if (nComp !== 3) {
    throw new Error(`${path}: inputs must have 3 components, got ${nComp}`);
  }
  const [tCases, nPoints, tComp, tNt] = targets.shape;
  if (tCases !== nCases || tComp !== 3 || tNt !== nt) {
    throw new Error(`${path}: targets shape ${targets.shape} inconsistent with inputs`);
  }
  return {
    dt: meta.dt as number,
    nt,
    nCases,
    nPoints,
    caseIds: (meta.case_ids as number[]) ?? Array.from({ length: nCases }, (_, i) => i),
    inputs: inputs.data as Float64Array,
    targets: targets.data as Float64Array,
    fingerprint: fingerprintArrays(inputs.data as Float64Array, targets.data as Float64Array),
  };
}
