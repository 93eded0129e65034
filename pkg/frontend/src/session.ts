import { ApiClient, ApiError } from './api.js';
import { FrameMap, canvasToImage, decimate } from './geometry.js';
import { ExecutionReport, Point, PredictionPayload, SceneSummary } from './types.js';

export type Phase = 'idle' | 'drawing' | 'executed' | 'accepted';

export interface SessionEvents {
  onScene(scene: SceneSummary): void;
  onReport(report: ExecutionReport, stroke: Point[]): void;
  onAccepted(sampleId: string, count: number): void;
  onPrediction(pred: PredictionPayload | null, message?: string): void;
  onError(message: string): void;
}

/**
 * Demonstration-loop state machine, free of DOM dependencies.
 *
 * draw -> execute -> accept (only after success) -> next scene; a failed
 * execution re-enables drawing and offers a scene re-randomize instead.
 */
export class Session {
  phase: Phase = 'idle';
  scene: SceneSummary | null = null;
  lastReport: ExecutionReport | null = null;
  acceptedCount = 0;
  private stroke: Point[] = [];
  private accepting = false;

  constructor(
    private api: ApiClient,
    private events: SessionEvents,
    public frame: FrameMap,
  ) {}

  async nextScene(seed?: number): Promise<void> {
    try {
      this.scene = await this.api.newScene(seed);
      const [h, w] = this.scene.image_size;
      this.frame = { ...this.frame, imageWidth: w, imageHeight: h };
      this.phase = 'idle';
      this.lastReport = null;
      this.stroke = [];
      this.events.onScene(this.scene);
    } catch (err) {
      this.events.onError(describe(err));
    }
  }

  beginStroke(p: Point): void {
    if (!this.scene || this.phase === 'accepted') return;
    this.phase = 'drawing';
    this.stroke = [p];
  }

  extendStroke(p: Point): void {
    if (this.phase !== 'drawing') return;
    this.stroke.push(p);
  }

  get strokePoints(): Point[] {
    return this.stroke.slice();
  }

  get canAccept(): boolean {
    return this.phase === 'executed' && !!this.lastReport?.success;
  }

  /** Submit the captured stroke to the simulator. */
  async endStroke(): Promise<void> {
    if (this.phase !== 'drawing' || !this.scene) return;
    if (this.stroke.length < 2) {
      this.phase = 'idle';
      this.events.onError('a demonstration needs at least 2 points');
      return;
    }
    const points = this.submissionPoints();
    try {
      this.lastReport = await this.api.runDemo(this.scene.scene_id, points);
      this.phase = 'executed';
      this.events.onReport(this.lastReport, this.stroke.slice());
    } catch (err) {
      this.phase = 'idle';
      this.events.onError(describe(err));
    }
  }

  /** Persist the last successful demo; guarded so a double-click stores one sample. */
  async accept(): Promise<void> {
    if (!this.canAccept || !this.scene || this.accepting) return;
    this.accepting = true;
    try {
      const res = await this.api.accept(this.scene.scene_id, this.submissionPoints());
      this.phase = 'accepted';
      this.acceptedCount += 1;
      this.events.onAccepted(res.sample_id, this.acceptedCount);
    } catch (err) {
      this.events.onError(describe(err));
    } finally {
      this.accepting = false;
    }
  }

  async inspect(): Promise<void> {
    if (!this.scene) return;
    try {
      this.events.onPrediction(await this.api.predict(this.scene.scene_id));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.events.onPrediction(null, 'no trained model yet');
      } else {
        this.events.onError(describe(err));
      }
    }
  }

  private submissionPoints(): number[][] {
    return decimate(this.stroke, 200).map((p) => {
      const q = canvasToImage(this.frame, p);
      return [q.x, q.y];
    });
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.status}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}
