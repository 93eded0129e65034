export interface Point {
  x: number;
  y: number;
}

export interface SceneSummary {
  scene_id: string;
  seed: number;
  image_size: [number, number]; // [height, width]
}

export interface ExecutionReport {
  success: boolean;
  final_occlusion: number;
  leaf_angles: number[][];
  gripper_path: { frame: string; points: number[][] };
}

export interface PredictionPayload {
  points: number[][]; // 50 [x, y] pixel points
  yaw: number;
}

export type JobState = 'pending' | 'running' | 'done' | 'failed';

export interface JobStatus {
  job_id: string;
  state: JobState;
  epoch: number;
  total_epochs: number;
  train_losses: number[];
  dev_losses: number[];
  test_losses: number[];
  best_epoch?: number;
  error: string | null;
}
