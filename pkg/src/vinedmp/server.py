"""HTTP API backing the demo studio.

State is the dataset directory, an optional loaded checkpoint, in-memory
scenes and at most one background training job.  Dataset writes serialize
through a lock; job status reads are plain snapshots.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import learner
from .dataset import Dataset, DatasetError
from .dmp import Trajectory
from .scene import (DEFAULT_GRIPPER_RADIUS, SceneConfig, execute,
                    generate_scene, render)

STATIC_DIR = Path(__file__).resolve().parents[2] / "frontend" / "dist"


class SceneRequest(BaseModel):
    seed: int | None = None


class DemoRequest(BaseModel):
    points: list[list[float]]


class TrainRequest(BaseModel):
    epochs: int = 150
    batch_size: int = 32
    lr0: float = 1e-3
    halve_every: int = 40
    seed: int = 0
    input_size: int = 64
    num_kernels: int = 10


class ServerState:
    def __init__(self, data_dir, checkpoint_path=None):
        self.data_dir = Path(data_dir)
        self.dataset_lock = threading.Lock()
        self.scenes = {}
        self.model = None
        self.model_lock = threading.Lock()
        self.job = None
        self.job_lock = threading.Lock()
        if checkpoint_path:
            self.model = learner.load_checkpoint(checkpoint_path)

    def dataset(self):
        if (self.data_dir / "manifest.json").exists():
            return Dataset.load(self.data_dir)
        ds = Dataset(self.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        return ds


def _parse_trajectory(points, scene):
    if not isinstance(points, list) or len(points) < 2:
        raise HTTPException(400, "a demonstration needs at least 2 points")
    try:
        traj = Trajectory(points=np.asarray(points, dtype=float),
                          frame="image_px")
    except ValueError as err:
        raise HTTPException(400, str(err))
    h, w = scene.image_size
    pts = traj.points
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > w - 1) \
            or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > h - 1):
        raise HTTPException(400, "trajectory leaves the image")
    return traj


def create_app(data_dir, checkpoint_path=None, scene_config=None):
    app = FastAPI(title="vinedmp")
    state = ServerState(data_dir, checkpoint_path=checkpoint_path)
    app.state.vinedmp = state
    scene_config = scene_config or SceneConfig()

    def get_scene(scene_id):
        entry = state.scenes.get(scene_id)
        if entry is None:
            raise HTTPException(404, f"unknown scene {scene_id}")
        return entry

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/scenes")
    def make_scene(req: SceneRequest):
        seed = req.seed if req.seed is not None else uuid.uuid4().int % 2**31
        scene = generate_scene(seed, scene_config)
        scene_id = uuid.uuid4().hex[:12]
        state.scenes[scene_id] = scene
        h, w = scene.image_size
        return {"scene_id": scene_id, "seed": seed, "image_size": [h, w]}

    @app.get("/api/scenes/{scene_id}")
    def scene_record(scene_id: str):
        return get_scene(scene_id).to_dict()

    @app.get("/api/scenes/{scene_id}/image")
    def scene_image(scene_id: str):
        img = render(get_scene(scene_id))
        ok, buf = cv2.imencode(".png", cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        if not ok:
            raise HTTPException(500, "render failed")
        return Response(content=buf.tobytes(), media_type="image/png")

    @app.post("/api/scenes/{scene_id}/demo")
    def run_demo(scene_id: str, req: DemoRequest):
        scene = get_scene(scene_id)
        traj = _parse_trajectory(req.points, scene)
        report = execute(scene.clone(), traj,
                         gripper_radius=DEFAULT_GRIPPER_RADIUS)
        return report.to_dict()

    @app.post("/api/scenes/{scene_id}/accept")
    def accept_demo(scene_id: str, req: DemoRequest):
        scene = get_scene(scene_id)
        traj = _parse_trajectory(req.points, scene)
        report = execute(scene.clone(), traj,
                         gripper_radius=DEFAULT_GRIPPER_RADIUS)
        if not report.success:
            raise HTTPException(409, "demonstration does not unveil the stem")
        with state.dataset_lock:
            ds = state.dataset()
            sample_id = f"demo_{uuid.uuid4().hex[:10]}"
            ds.add_sample(sample_id, render(scene), traj, "train", scene=scene)
            ds.save_manifest()
        return {"sample_id": sample_id}

    @app.get("/api/predict/{scene_id}")
    def predict(scene_id: str):
        scene = get_scene(scene_id)
        with state.model_lock:
            model = state.model
        if model is None:
            raise HTTPException(409, "no checkpoint loaded")
        pred = learner.predict_trajectory(model, render(scene))
        pts = pred.pixel_trajectory.points
        idx = np.linspace(0, len(pts) - 1, 50).round().astype(int)
        return {"points": [list(p) for p in pts[idx]], "yaw": pred.yaw}

    @app.post("/api/train")
    def start_train(req: TrainRequest):
        with state.job_lock:
            if state.job is not None and state.job["state"] in ("pending", "running"):
                raise HTTPException(409, "a training job is already running")
            job_id = uuid.uuid4().hex[:12]
            state.job = {"job_id": job_id, "state": "pending", "epoch": 0,
                         "total_epochs": req.epochs,
                         "train_losses": [], "dev_losses": [], "test_losses": [],
                         "error": None}

        def run():
            job = state.job
            try:
                with state.dataset_lock:
                    ds = state.dataset()
                mcfg = learner.ModelConfig(input_size=req.input_size,
                                           num_kernels=req.num_kernels,
                                           seed=req.seed)
                model = learner.VisionDmpModel(mcfg)
                splits = {}
                for name in ("train", "dev", "test"):
                    pairs = ds.load_pairs(name)
                    if pairs:
                        splits[name] = learner.prepare_split(pairs, mcfg)
                if "dev" not in splits:  # no dev demos yet: select on train
                    splits["dev"] = splits["train"]
                job["state"] = "running"

                def progress(epoch, report):
                    job["epoch"] = epoch + 1
                    job["train_losses"] = list(report.train_losses)
                    job["dev_losses"] = list(report.dev_losses)
                    job["test_losses"] = list(report.test_losses)

                tcfg = learner.TrainConfig(epochs=req.epochs,
                                           batch_size=req.batch_size,
                                           lr0=req.lr0,
                                           halve_every=req.halve_every,
                                           seed=req.seed)
                report = learner.train(model, splits, tcfg, progress=progress)
                ckpt = state.data_dir / "model.ckpt"
                learner.save_checkpoint(model, ckpt)
                with state.model_lock:
                    state.model = model
                job["best_epoch"] = report.best_epoch
                job["state"] = "done"
            except Exception as err:  # surfaced through job status
                job["error"] = str(err)
                job["state"] = "failed"

        threading.Thread(target=run, daemon=True).start()
        return {"job_id": job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = state.job
        if job is None or job["job_id"] != job_id:
            raise HTTPException(404, f"unknown job {job_id}")
        return dict(job)

    if STATIC_DIR.exists():
        app.mount("/", StaticFiles(directory=STATIC_DIR, html=True),
                  name="studio")
    return app
