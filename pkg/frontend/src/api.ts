import { ExecutionReport, JobStatus, PredictionPayload, SceneSummary } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

/** Thin typed client over the demo service; fetch is injectable for tests. */
export class ApiClient {
  constructor(private fetchFn: FetchLike = (u, i) => fetch(u, i)) {}

  private async request<T>(url: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(url, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && body.detail) detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  newScene(seed?: number): Promise<SceneSummary> {
    return this.request('/api/scenes', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(seed === undefined ? {} : { seed }),
    });
  }

  sceneImageUrl(sceneId: string): string {
    return `/api/scenes/${sceneId}/image`;
  }

  runDemo(sceneId: string, points: number[][]): Promise<ExecutionReport> {
    return this.request(`/api/scenes/${sceneId}/demo`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ points }),
    });
  }

  accept(sceneId: string, points: number[][]): Promise<{ sample_id: string }> {
    return this.request(`/api/scenes/${sceneId}/accept`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ points }),
    });
  }

  predict(sceneId: string): Promise<PredictionPayload> {
    return this.request(`/api/predict/${sceneId}`);
  }

  startTraining(config: Record<string, number>): Promise<{ job_id: string }> {
    return this.request('/api/train', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(config),
    });
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request(`/api/jobs/${jobId}`);
  }
}
