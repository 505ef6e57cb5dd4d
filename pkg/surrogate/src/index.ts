export { ready, tf } from './backend';
export {
  Container,
  DATASET_MAGIC,
  StoredArray,
  WaveDataset,
  fingerprintArrays,
  loadDataset,
  readContainer,
} from './container';
export {
  CaseSplit,
  Normalization,
  caseTarget,
  caseWave,
  computeNormalization,
  modelArrays,
  mulberry32,
  splitCases,
  subsetDataset,
  truncateDataset,
} from './data';
export { InputError, TrainingError } from './errors';
export {
  MatmulConv1d,
  MatmulConvTranspose1d,
  SEARCH_SPACE,
  SurrogateConfig,
  assertInSpace,
  buildModel,
  inSearchSpace,
  parseConfig,
} from './model';
export { loadModel, saveModel } from './io';
export {
  ResponseSpectrum,
  differentiate,
  geomspace,
  velocityResponseSpectrum,
} from './spectrum';
export {
  EpochRecord,
  TrainOptions,
  TrainedModel,
  predict,
  predictBatch,
  train,
} from './train';
export {
  EvaluationReport,
  SPECTRA_BAND,
  SPECTRA_DAMPING,
  SpectraError,
  evaluateModel,
} from './evaluate';
export {
  SearchOptions,
  SearchResult,
  TrialRecord,
  sampleConfig,
  searchHyperparams,
} from './search';
