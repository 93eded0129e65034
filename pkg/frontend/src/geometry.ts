import { Point } from './types.js';

/**
 * Linear mapping between canvas coordinates and image pixel coordinates.
 * When the canvas matches the image size the mapping is the identity, so
 * submitted stroke points equal the captured pointer points exactly.
 */
export interface FrameMap {
  canvasWidth: number;
  canvasHeight: number;
  imageWidth: number;
  imageHeight: number;
}

export function canvasToImage(map: FrameMap, p: Point): Point {
  if (map.canvasWidth === map.imageWidth && map.canvasHeight === map.imageHeight) {
    return { x: p.x, y: p.y };
  }
  return {
    x: (p.x * (map.imageWidth - 1)) / (map.canvasWidth - 1),
    y: (p.y * (map.imageHeight - 1)) / (map.canvasHeight - 1),
  };
}

export function imageToCanvas(map: FrameMap, p: Point): Point {
  if (map.canvasWidth === map.imageWidth && map.canvasHeight === map.imageHeight) {
    return { x: p.x, y: p.y };
  }
  return {
    x: (p.x * (map.canvasWidth - 1)) / (map.imageWidth - 1),
    y: (p.y * (map.canvasHeight - 1)) / (map.imageHeight - 1),
  };
}

export function clampToFrame(p: Point, width: number, height: number): Point {
  return {
    x: Math.min(Math.max(p.x, 0), width - 1),
    y: Math.min(Math.max(p.y, 0), height - 1),
  };
}

/** Uniform index decimation down to at most maxPoints, endpoints kept. */
export function decimate(points: Point[], maxPoints = 200): Point[] {
  if (points.length <= maxPoints) return points.slice();
  const out: Point[] = [];
  for (let i = 0; i < maxPoints; i++) {
    const idx = Math.round((i * (points.length - 1)) / (maxPoints - 1));
    out.push(points[idx]);
  }
  return out;
}

/**
 * Rasterize a polyline into a width*height mask (row-major, 1 = covered).
 * Bresenham over rounded endpoints; pure so overlay rendering can be
 * pixel-diffed in tests without a canvas.
 */
export function rasterizePolyline(
  points: Point[],
  width: number,
  height: number,
): Uint8Array {
  const mask = new Uint8Array(width * height);
  const put = (x: number, y: number) => {
    if (x >= 0 && x < width && y >= 0 && y < height) mask[y * width + x] = 1;
  };
  for (let i = 0; i + 1 < points.length; i++) {
    let x0 = Math.round(points[i].x);
    let y0 = Math.round(points[i].y);
    const x1 = Math.round(points[i + 1].x);
    const y1 = Math.round(points[i + 1].y);
    const dx = Math.abs(x1 - x0);
    const dy = -Math.abs(y1 - y0);
    const sx = x0 < x1 ? 1 : -1;
    const sy = y0 < y1 ? 1 : -1;
    let err = dx + dy;
    for (;;) {
      put(x0, y0);
      if (x0 === x1 && y0 === y1) break;
      const e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  return mask;
}
