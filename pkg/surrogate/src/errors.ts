/** Invalid caller-supplied data: shapes, ranges, malformed files. */
export class InputError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'InputError';
  }
}

/** Training could not produce a usable model (divergence, all trials failed). */
export class TrainingError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'TrainingError';
  }
}
