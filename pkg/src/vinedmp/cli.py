"""Command line interface: dataset generation, training, evaluation, serving."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import cv2
import numpy as np

from . import learner
from .dataset import Dataset, DatasetError, generate_dataset
from .dmp import Trajectory
from .projection import CameraRig, PointBehindCamera, RayParallelToPlane
from .scene import DEFAULT_GRIPPER_RADIUS, Scene, execute

USER_ERROR, INTERNAL_ERROR = 1, 2


def _fail(message, code=USER_ERROR):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Vision-conditioned planar DMP toolkit."""


@main.command("gen-dataset")
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", default="80/10/10", show_default=True,
              help="train/dev/test as percentages or absolute counts")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--augment-factor", type=int, default=0, show_default=True)
@click.option("--image-size", default="480x640", show_default=True)
@click.option("--busy-background", is_flag=True)
def gen_dataset(count, seed, split, out_dir, augment_factor, image_size,
                busy_background):
    """Generate scenes with oracle demos; keep only successful executions."""
    try:
        h, w = (int(v) for v in image_size.lower().split("x"))
    except ValueError:
        _fail(f"bad --image-size {image_size!r}, expected HxW")
    try:
        ds = generate_dataset(
            out_dir, count=count, seed=seed, split=split,
            augment_factor=augment_factor, image_size=(h, w),
            busy_background=busy_background,
            progress=lambda i, n: click.echo(f"\r{i}/{n} samples", nl=(i == n)))
    except DatasetError as err:
        _fail(err)
    except Exception as err:  # pragma: no cover - defensive
        _fail(err, INTERNAL_ERROR)
    counts = {s: len(ds.split_samples(s)) for s in ("train", "dev", "test")}
    click.echo(f"wrote {len(ds.samples)} samples to {out_dir} ({counts})")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=150, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--halve-every", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--input-size", type=int, default=64, show_default=True)
@click.option("--kernels", type=int, default=10, show_default=True)
def train(data_dir, out_path, epochs, batch, lr, halve_every, seed, input_size,
          kernels):
    """Train on a dataset; write best-dev checkpoint and the training report."""
    try:
        ds = Dataset.load(data_dir)
    except DatasetError as err:
        _fail(err)
    if not ds.split_samples("dev"):
        _fail("dev split required for model selection")
    if not ds.split_samples("train"):
        _fail("train split is empty")
    mcfg = learner.ModelConfig(input_size=input_size, num_kernels=kernels,
                               seed=seed)
    model = learner.VisionDmpModel(mcfg)
    splits = {}
    for name in ("train", "dev", "test"):
        pairs = ds.load_pairs(name)
        if pairs:
            splits[name] = learner.prepare_split(pairs, mcfg)
    tcfg = learner.TrainConfig(epochs=epochs, batch_size=batch, lr0=lr,
                               halve_every=halve_every, seed=seed)
    report_path = Path(out_path).with_suffix(".report.json")
    try:
        report = learner.train(
            model, splits, tcfg,
            progress=lambda e, r: click.echo(
                f"epoch {e + 1}/{epochs} train {r.train_losses[-1]:.6f} "
                f"dev {r.dev_losses[-1]:.6f}"))
    except learner.NonFiniteGradient as err:
        _fail(err, INTERNAL_ERROR)
    learner.save_checkpoint(model, out_path)
    report.checkpoint = str(Path(out_path).name)
    report_path.write_text(report.to_json())
    click.echo(f"best epoch {report.best_epoch} "
               f"(dev loss {report.dev_losses[report.best_epoch]:.6f}); "
               f"checkpoint {out_path}")


@main.command("eval")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--split", "splits", multiple=True, default=("test",),
              show_default=True)
@click.option("--success-sim", is_flag=True,
              help="execute predicted trajectories on the split's stored scenes")
def eval_cmd(data_dir, model_path, splits, success_sim):
    """Report RMSE (480x640 pixel scale) and optional simulated success rate."""
    try:
        ds = Dataset.load(data_dir)
        model = learner.load_checkpoint(model_path)
    except (DatasetError, ValueError) as err:
        _fail(err)
    for split in splits:
        pairs = ds.load_pairs(split)
        if not pairs:
            _fail(f"split {split!r} is empty")
        data = learner.prepare_split(pairs, model.config)
        mean, std = learner.evaluate_rmse(model, data)
        click.echo(f"{split}: {mean:.2f} ± {std:.2f} px")
        if success_sim:
            rate = success_rate(ds, model, split)
            click.echo(f"{split} unveiling success: {100 * rate:.0f}%")


def success_rate(ds: Dataset, model, split):
    """Fraction of the split's original scenes unveiled by predicted paths."""
    refs = [s for s in ds.split_samples(split) if s.scene is not None]
    if not refs:
        raise DatasetError(f"split {split!r} has no stored scenes")
    gripper = float(ds.provenance.get("gripper_radius", DEFAULT_GRIPPER_RADIUS))
    wins = 0
    for ref in refs:
        scene = ds.load_scene(ref)
        image = ds.load_image(ref)
        pred = learner.predict_trajectory(model, image)
        pts = pred.pixel_trajectory.points
        h, w = scene.image_size
        clipped = np.column_stack([np.clip(pts[:, 0], 0, w - 1),
                                   np.clip(pts[:, 1], 0, h - 1)])
        traj = Trajectory(points=clipped, frame="image_px")
        wins += execute(scene.clone(), traj, gripper_radius=gripper).success
    return wins / len(refs)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--rig", "rig_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def predict(model_path, image_path, rig_path, out_path):
    """Predict a task-plane trajectory + gripper yaw for one image."""
    try:
        model = learner.load_checkpoint(model_path)
        rig = CameraRig.from_json(Path(rig_path).read_text())
    except (ValueError, KeyError) as err:
        _fail(err)
    bgr = cv2.imread(image_path, cv2.IMREAD_COLOR)
    if bgr is None:
        _fail(f"unreadable image {image_path}")
    image = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    try:
        pred = learner.predict_trajectory(model, image, rig=rig)
    except (RayParallelToPlane, PointBehindCamera) as err:
        _fail(f"projection failed: {err}")
    record = dict(pred.plane_trajectory.to_dict(), yaw=pred.yaw)
    text = json.dumps(record, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        click.echo(text, nl=False)
    start = pred.plane_trajectory.points[0]
    goal = pred.plane_trajectory.points[-1]
    click.echo(
        f"{len(pred.plane_trajectory)} points, start {np.round(start, 4)} m, "
        f"goal {np.round(goal, 4)} m, yaw {pred.yaw:.3f} rad", err=True)


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(port, data_dir, model_path, host):
    """Serve the HTTP API and the demo studio."""
    import uvicorn

    from .server import create_app

    app = create_app(data_dir, checkpoint_path=model_path)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit:
        raise
    except OSError as err:
        _fail(f"cannot bind {host}:{port}: {err}")
