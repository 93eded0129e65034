import { ApiClient } from './api.js';
import { clampToFrame } from './geometry.js';
import { OverlayPlan, predictionOverlay, strokeOverlay } from './overlay.js';
import { Session } from './session.js';
import { curvesFromStatus, pollTraining } from './training.js';
import { ExecutionReport, Point } from './types.js';

const api = new ApiClient();

const byId = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const canvas = byId<HTMLCanvasElement>('scene-canvas');
const ctx = canvas.getContext('2d')!;
const banner = byId<HTMLDivElement>('banner');
const acceptBtn = byId<HTMLButtonElement>('accept-btn');
const rerollBtn = byId<HTMLButtonElement>('reroll-btn');
const predictBtn = byId<HTMLButtonElement>('predict-btn');
const trainBtn = byId<HTMLButtonElement>('train-btn');
const galleryCount = byId<HTMLSpanElement>('gallery-count');
const curveBox = byId<HTMLPreElement>('curves');

let background: HTMLImageElement | null = null;
let overlays: OverlayPlan[] = [];

function say(text: string, tone: 'info' | 'good' | 'bad' = 'info'): void {
  banner.textContent = text;
  banner.className = `banner ${tone}`;
}

function redraw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (background) ctx.drawImage(background, 0, 0, canvas.width, canvas.height);
  for (const plan of overlays) {
    if (plan.polyline.length >= 2) {
      ctx.strokeStyle = plan.color;
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.moveTo(plan.polyline[0].x, plan.polyline[0].y);
      for (const p of plan.polyline.slice(1)) ctx.lineTo(p.x, p.y);
      ctx.stroke();
    }
    for (const m of plan.markers) {
      ctx.fillStyle = m.kind === 'start' ? '#40c057' : '#fab005';
      ctx.beginPath();
      ctx.arc(m.at.x, m.at.y, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

const session = new Session(
  api,
  {
    onScene(scene) {
      overlays = [];
      acceptBtn.disabled = true;
      rerollBtn.hidden = true;
      const img = new Image();
      img.onload = () => {
        background = img;
        redraw();
      };
      img.src = api.sceneImageUrl(scene.scene_id);
      say('draw the unveiling stroke: start past the leaf tip, sweep it aside');
    },
    onReport(report: ExecutionReport, stroke) {
      overlays = [strokeOverlay(stroke)];
      redraw();
      if (report.success) {
        acceptBtn.disabled = false;
        say(
          `success, occlusion ${(report.final_occlusion * 100).toFixed(0)}%`,
          'good',
        );
      } else {
        rerollBtn.hidden = false;
        say(
          `stem still occluded (${(report.final_occlusion * 100).toFixed(0)}%), ` +
            'redraw or try a new scene',
          'bad',
        );
      }
    },
    onAccepted(sampleId, count) {
      galleryCount.textContent = String(count);
      say(`stored ${sampleId}`, 'good');
      void session.nextScene();
    },
    onPrediction(pred, message) {
      if (!pred) {
        say(message ?? 'no prediction available');
        return;
      }
      overlays.push(predictionOverlay(pred, session.frame));
      redraw();
      say(`predicted sweep, yaw ${pred.yaw.toFixed(2)} rad`);
    },
    onError(message) {
      say(message, 'bad');
    },
  },
  { canvasWidth: canvas.width, canvasHeight: canvas.height, imageWidth: 640, imageHeight: 480 },
);

function pointerPoint(ev: PointerEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return clampToFrame(
    {
      x: ((ev.clientX - rect.left) * canvas.width) / rect.width,
      y: ((ev.clientY - rect.top) * canvas.height) / rect.height,
    },
    canvas.width,
    canvas.height,
  );
}

canvas.addEventListener('pointerdown', (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  session.beginStroke(pointerPoint(ev));
});
canvas.addEventListener('pointermove', (ev) => {
  if (session.phase !== 'drawing') return;
  session.extendStroke(pointerPoint(ev));
  overlays = [strokeOverlay(session.strokePoints)];
  redraw();
});
canvas.addEventListener('pointerup', () => void session.endStroke());

acceptBtn.addEventListener('click', () => void session.accept());
rerollBtn.addEventListener('click', () => void session.nextScene());
predictBtn.addEventListener('click', () => void session.inspect());

trainBtn.addEventListener('click', async () => {
  trainBtn.disabled = true;
  try {
    const { job_id } = await api.startTraining({});
    say(`training job ${job_id} started`);
    await pollTraining(api, job_id, (status) => {
      const curves = curvesFromStatus(status);
      const dev = curves.dev.map((c) => c.loss.toExponential(2)).join(' ');
      curveBox.textContent =
        `epoch ${status.epoch}/${status.total_epochs}\n` +
        `dev losses: ${dev}\n` +
        (curves.bestEpoch === null ? '' : `best epoch: ${curves.bestEpoch}`);
    });
    say('training finished', 'good');
  } catch (err) {
    say(err instanceof Error ? err.message : String(err), 'bad');
  } finally {
    trainBtn.disabled = false;
  }
});

void session.nextScene();
