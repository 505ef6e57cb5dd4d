import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { tf, ready } from './backend';
import { InputError } from './errors';
import { parseConfig } from './model';
import { TrainedModel } from './train';

const TOPOLOGY_FILE = 'model.json';
const WEIGHTS_FILE = 'weights.bin';
const SIDECAR_FILE = 'train.json';

function concatBuffers(data: ArrayBuffer | ArrayBuffer[]): Buffer {
  if (Array.isArray(data)) {
    return Buffer.concat(data.map((b) => Buffer.from(b)));
  }
  return Buffer.from(data);
}

/**
 * Persist a trained model as three files: network topology, raw weights,
 * and a sidecar with the config, normalization scales, split, training
 * history and the fingerprint of the dataset it was trained on.
 */
export async function saveModel(dir: string, trained: TrainedModel): Promise<void> {
  mkdirSync(dir, { recursive: true });
  await trained.model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      writeFileSync(
        join(dir, TOPOLOGY_FILE),
        JSON.stringify(
          { modelTopology: artifacts.modelTopology, weightSpecs: artifacts.weightSpecs },
          null,
          1,
        ),
      );
      writeFileSync(join(dir, WEIGHTS_FILE), concatBuffers(artifacts.weightData!));
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: 'JSON' } };
    }),
  );
  writeFileSync(
    join(dir, SIDECAR_FILE),
    JSON.stringify(
      {
        config: trained.config,
        normalization: trained.normalization,
        split: trained.split,
        nt: trained.nt,
        datasetFingerprint: trained.datasetFingerprint,
        history: trained.history,
      },
      null,
      1,
    ),
  );
}

/** Load a model saved by saveModel, with its sidecar metadata. */
export async function loadModel(dir: string): Promise<TrainedModel> {
  await ready();
  let topo: { modelTopology: unknown; weightSpecs: tf.io.WeightsManifestEntry[] };
  let sidecar: {
    config: unknown;
    normalization: TrainedModel['normalization'];
    split: TrainedModel['split'];
    nt: number;
    datasetFingerprint: string;
    history: TrainedModel['history'];
  };
  try {
    topo = JSON.parse(readFileSync(join(dir, TOPOLOGY_FILE), 'utf8'));
    sidecar = JSON.parse(readFileSync(join(dir, SIDECAR_FILE), 'utf8'));
  } catch (e) {
    throw new InputError(`cannot read model from ${dir}: ${(e as Error).message}`);
  }
  const weightData = readFileSync(join(dir, WEIGHTS_FILE));
  const model = await tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: topo.modelTopology as {},
      weightSpecs: topo.weightSpecs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  );
  return {
    model,
    config: parseConfig(sidecar.config),
    normalization: sidecar.normalization,
    split: sidecar.split,
    nt: sidecar.nt,
    datasetFingerprint: sidecar.datasetFingerprint,
    history: sidecar.history,
  };
}
