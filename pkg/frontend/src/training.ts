import { ApiClient } from './api.js';
import { JobStatus } from './types.js';

export interface CurvePoint {
  epoch: number;
  loss: number;
}

export interface CurveSet {
  train: CurvePoint[];
  dev: CurvePoint[];
  test: CurvePoint[];
  bestEpoch: number | null;
}

export function curvesFromStatus(status: JobStatus): CurveSet {
  const toCurve = (losses: number[]): CurvePoint[] =>
    losses.map((loss, epoch) => ({ epoch, loss }));
  let best: number | null = null;
  if (status.best_epoch !== undefined) {
    best = status.best_epoch;
  } else if (status.dev_losses.length > 0) {
    best = status.dev_losses.indexOf(Math.min(...status.dev_losses));
  }
  return {
    train: toCurve(status.train_losses),
    dev: toCurve(status.dev_losses),
    test: toCurve(status.test_losses),
    bestEpoch: best,
  };
}

/**
 * Poll a training job once a second until it finishes.  The tick callback
 * fires on every status snapshot; the returned promise settles with the
 * terminal status.  setIntervalFn is injectable so tests can drive time.
 */
export function pollTraining(
  api: ApiClient,
  jobId: string,
  tick: (status: JobStatus) => void,
  intervalMs = 1000,
  setIntervalFn: typeof setInterval = setInterval,
  clearIntervalFn: typeof clearInterval = clearInterval,
): Promise<JobStatus> {
  return new Promise((resolve, reject) => {
    let busy = false;
    const timer = setIntervalFn(async () => {
      if (busy) return; // skip a beat rather than stack requests
      busy = true;
      try {
        const status = await api.jobStatus(jobId);
        tick(status);
        if (status.state === 'done') {
          clearIntervalFn(timer);
          resolve(status);
        } else if (status.state === 'failed') {
          clearIntervalFn(timer);
          reject(new Error(status.error ?? 'training failed'));
        }
      } catch (err) {
        clearIntervalFn(timer);
        reject(err);
      } finally {
        busy = false;
      }
    }, intervalMs);
  });
}
