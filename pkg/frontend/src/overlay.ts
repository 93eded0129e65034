import { FrameMap, imageToCanvas } from './geometry.js';
import { Point, PredictionPayload } from './types.js';

export interface Marker {
  at: Point;
  kind: 'start' | 'goal';
}

export interface OverlayPlan {
  polyline: Point[];
  markers: Marker[];
  color: string;
}

/**
 * Turn an API prediction payload into canvas-space drawing instructions.
 * With a canvas matching the image size the coordinates pass through
 * unchanged, which the pixel-diff test relies on.
 */
export function predictionOverlay(
  pred: PredictionPayload,
  frame: FrameMap,
): OverlayPlan {
  const polyline = pred.points.map(([x, y]) => imageToCanvas(frame, { x, y }));
  return {
    polyline,
    markers: [
      { at: polyline[0], kind: 'start' },
      { at: polyline[polyline.length - 1], kind: 'goal' },
    ],
    color: '#2db7ff',
  };
}

export function strokeOverlay(stroke: Point[]): OverlayPlan {
  // demo strokes draw in red, matching the dataset figures
  return { polyline: stroke.slice(), markers: [], color: '#e03131' };
}
