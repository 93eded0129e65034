"""Vision-to-DMP learning.

A small convolutional backbone trained from random initialization maps an RGB
crop to anchored basis weights W' (2 x K).  The predicted trajectory is the
closed form W' phi(x_j) at M uniform phases -- no integration in the training
loop -- and the loss is smooth L1 on per-axis normalized trajectories.
Parameters are 64-bit throughout so finite-difference gradient checks hold at
tight tolerance.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch

from .dmp import (CanonicalSystem, DmpModel, GaussianBasis, Trajectory,
                  integrate, resample_by_arclength)
from .projection import gripper_yaw, trajectory_to_plane

CHECKPOINT_MAGIC = b"RDMPCKPT"
CHECKPOINT_VERSION = 1


class ImageTooSmall(ValueError):
    pass


class NonFiniteActivation(FloatingPointError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    channels: tuple = (8, 16, 32, 64)
    num_kernels: int = 10
    num_points: int = 50
    basis_overlap: float = 0.5
    residual: bool = False
    seed: int = 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, rec):
        rec = dict(rec)
        rec["channels"] = tuple(rec["channels"])
        return cls(**rec)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    lr0: float = 1e-3
    halve_every: int = 40
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss_beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.halve_every) <= 0:
            raise ValueError("epochs, batch_size and halve_every must be positive")
        if self.lr0 <= 0 or self.loss_beta <= 0:
            raise ValueError("lr0 and loss_beta must be positive")

    def lr_at(self, epoch):
        return self.lr0 * 0.5 ** (epoch // self.halve_every)

    def to_dict(self):
        d = dict(self.__dict__)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, rec):
        rec = dict(rec)
        if "adam_betas" in rec:
            rec["adam_betas"] = tuple(rec["adam_betas"])
        return cls(**rec)


class VisionDmpModel(torch.nn.Module):
    """Conv blocks with group normalization, flattened into an affine head.

    Each block is conv3x3 -> GroupNorm -> relu -> maxpool2x2.  The final
    feature map is flattened rather than globally averaged: average pooling
    collapses the spatial cues this regression depends on and the network then
    degenerates to predicting the mean training trajectory.
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        if cfg.input_size % 2 ** len(cfg.channels):
            raise ValueError("input size must be divisible by 2^num_blocks")
        chans = (3,) + tuple(cfg.channels)
        self.convs = torch.nn.ModuleList([
            torch.nn.Conv2d(chans[i], chans[i + 1], 3, padding=1, bias=False,
                            dtype=torch.float64)
            for i in range(len(cfg.channels))
        ])
        self.norms = torch.nn.ModuleList([
            torch.nn.GroupNorm(min(8, c), c, dtype=torch.float64)
            for c in cfg.channels
        ])
        if cfg.residual:
            self.skips = torch.nn.ModuleList([
                torch.nn.Conv2d(chans[i], chans[i + 1], 1, dtype=torch.float64)
                for i in range(len(cfg.channels))
            ])
        else:
            self.skips = None
        side = cfg.input_size // 2 ** len(cfg.channels)
        self.feature_dim = cfg.channels[-1] * side * side
        self.head = torch.nn.Linear(self.feature_dim, 2 * cfg.num_kernels,
                                    dtype=torch.float64)
        self.basis = GaussianBasis(cfg.num_kernels, overlap=cfg.basis_overlap)
        phases = np.linspace(0.0, 1.0, cfg.num_points)
        self.register_buffer(
            "phi", torch.from_numpy(self.basis.matrix(phases)))  # (K, M)
        self._seeded_init(cfg.seed)

    def _seeded_init(self, seed):
        # fan-in-scaled uniform, drawn from numpy for cross-version determinism
        rng = np.random.default_rng(seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, torch.nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                elif isinstance(m, torch.nn.Linear):
                    fan_in = m.in_features
                else:
                    continue
                bound = 1.0 / np.sqrt(fan_in)
                for p in (m.weight, m.bias):
                    if p is not None:
                        p.copy_(torch.from_numpy(
                            rng.uniform(-bound, bound, size=tuple(p.shape))))

    def forward(self, images):
        """images (B, 3, S, S) float64 -> (W' (B, 2, K), traj (B, M, 2))."""
        x = images
        for i, conv in enumerate(self.convs):
            y = torch.relu(self.norms[i](conv(x)))
            if self.skips is not None:
                y = y + self.skips[i](x)
            x = torch.nn.functional.max_pool2d(y, 2)
        feats = x.flatten(1)
        wprime = self.head(feats).reshape(-1, 2, self.config.num_kernels)
        traj = (wprime @ self.phi).transpose(1, 2)  # (B, M, 2)
        if not torch.isfinite(traj).all():
            raise NonFiniteActivation("forward pass produced non-finite output")
        return wprime, traj

    # --- flat parameter store -------------------------------------------------
    def flat_parameters(self):
        return np.concatenate(
            [p.detach().numpy().reshape(-1) for p in self.parameters()])

    def set_flat_parameters(self, flat):
        flat = np.array(flat, dtype=np.float64, copy=True)
        i = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(flat[i:i + n].reshape(tuple(p.shape))))
                i += n
        if i != len(flat):
            raise ValueError("flat parameter size mismatch")

    def parameter_spec(self):
        return [(name, list(p.shape)) for name, p in self.named_parameters()]


def smooth_l1_loss(pred, target, beta=1.0):
    """Mean over all elements of the piecewise quadratic/absolute loss."""
    d = pred - target
    ad = torch.abs(d) if torch.is_tensor(d) else np.abs(d)
    if torch.is_tensor(d):
        return torch.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta).mean()
    return float(np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta).mean())


def preprocess(image, traj: Trajectory | None = None, input_size=64,
               num_points=50):
    """Center-crop square, resize, scale to [0, 1]; normalize the trajectory.

    The trajectory is arc-length resampled to ``num_points`` and divided
    per-axis by the ORIGINAL image dimensions (x/W, y/H).
    """
    h, w = image.shape[:2]
    if h < input_size or w < input_size:
        raise ImageTooSmall(f"image {h}x{w} smaller than input size {input_size}")
    m = min(h, w)
    top, left = (h - m) // 2, (w - m) // 2
    crop = image[top:top + m, left:left + m]
    resized = cv2.resize(crop, (input_size, input_size),
                         interpolation=cv2.INTER_LINEAR)
    tensor = resized.astype(np.float64).transpose(2, 0, 1) / 255.0
    if traj is None:
        return tensor, None
    pts = resample_by_arclength(traj.points, num_points)
    target = pts / np.array([w, h], dtype=float)
    return tensor, target


def prepare_split(samples, model_config: ModelConfig):
    """(image, Trajectory) pairs -> stacked (X, Y) float64 tensors."""
    xs, ys = [], []
    for image, traj in samples:
        x, y = preprocess(image, traj, input_size=model_config.input_size,
                          num_points=model_config.num_points)
        xs.append(x)
        ys.append(y)
    return (torch.from_numpy(np.stack(xs)), torch.from_numpy(np.stack(ys)))


def backward(model: VisionDmpModel, images, targets, beta=1.0):
    """Loss and exact reverse-mode gradient as one flat float64 array."""
    model.zero_grad(set_to_none=True)
    _, pred = model(images)
    loss = smooth_l1_loss(pred, targets, beta=beta)
    loss.backward()
    grads = []
    for p in model.parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad
        grads.append(g.detach().numpy().reshape(-1))
    flat = np.concatenate(grads)
    if not np.all(np.isfinite(flat)):
        raise NonFiniteGradient("non-finite gradient")
    return float(loss.detach()), flat


@dataclass
class TrainReport:
    train_losses: list
    dev_losses: list
    test_losses: list
    best_epoch: int
    checkpoint: str | None = None

    def to_dict(self):
        return {
            "train_losses": self.train_losses,
            "dev_losses": self.dev_losses,
            "test_losses": self.test_losses,
            "best_epoch": self.best_epoch,
            "checkpoint": self.checkpoint,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, rec):
        return cls(train_losses=rec["train_losses"], dev_losses=rec["dev_losses"],
                   test_losses=rec["test_losses"], best_epoch=rec["best_epoch"],
                   checkpoint=rec.get("checkpoint"))


def _eval_loss(model, x, y, beta, chunk=256):
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(x), chunk):
            _, pred = model(x[i:i + chunk])
            n = len(pred)
            total += float(smooth_l1_loss(pred, y[i:i + chunk], beta=beta)) * n
            count += n
    return total / count


def train(model: VisionDmpModel, datasets, config: TrainConfig | None = None,
          progress=None):
    """Adam training with halving lr schedule and best-dev-epoch selection.

    ``datasets`` maps split name to an (X, Y) tensor pair; "train" and "dev"
    are required.  ``progress`` (optional) is called as progress(epoch, report)
    after every epoch.
    """
    config = config or TrainConfig()
    if "train" not in datasets or "dev" not in datasets:
        raise ValueError("train and dev splits are required")
    x_train, y_train = datasets["train"]
    if len(x_train) == 0 or len(datasets["dev"][0]) == 0:
        raise ValueError("train and dev splits must be nonempty")
    opt = torch.optim.Adam(model.parameters(), lr=config.lr0,
                           betas=config.adam_betas, eps=config.adam_eps)
    report = TrainReport(train_losses=[], dev_losses=[], test_losses=[],
                         best_epoch=0)
    best_dev = np.inf
    best_params = model.flat_parameters()
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([config.seed, epoch]).permutation(len(x_train))
        running, seen = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[i:i + config.batch_size].copy())
            opt.zero_grad(set_to_none=True)
            _, pred = model(x_train[idx])
            loss = smooth_l1_loss(pred, y_train[idx], beta=config.loss_beta)
            loss.backward()
            for p in model.parameters():
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NonFiniteGradient(
                        f"non-finite gradient at epoch {epoch}, batch {i // config.batch_size}")
            opt.step()
            running += float(loss.detach()) * len(idx)
            seen += len(idx)
        report.train_losses.append(running / seen)
        dev_loss = _eval_loss(model, *datasets["dev"], config.loss_beta)
        report.dev_losses.append(dev_loss)
        if "test" in datasets and len(datasets["test"][0]):
            report.test_losses.append(
                _eval_loss(model, *datasets["test"], config.loss_beta))
        if dev_loss < best_dev:
            best_dev = dev_loss
            report.best_epoch = epoch
            best_params = model.flat_parameters()
        if progress is not None:
            progress(epoch, report)
    model.set_flat_parameters(best_params)
    return report


def evaluate_rmse(model: VisionDmpModel, dataset, image_size=(480, 640)):
    """Mean and std over samples of per-trajectory RMSE in pixels.

    Both prediction and target are denormalized to ``image_size`` (H, W).
    """
    x, y = dataset
    if len(x) == 0:
        raise ValueError("empty dataset")
    scale = torch.tensor([image_size[1], image_size[0]], dtype=torch.float64)
    rmses = []
    with torch.no_grad():
        for i in range(0, len(x), 256):
            _, pred = model(x[i:i + 256])
            d = (pred - y[i:i + 256]) * scale
            rmses.append(torch.sqrt((d * d).sum(dim=2).mean(dim=1)))
    rmses = torch.cat(rmses).numpy()
    return float(rmses.mean()), float(rmses.std())


@dataclass
class Prediction:
    pixel_trajectory: Trajectory
    plane_trajectory: Trajectory | None
    yaw: float
    weights: np.ndarray  # W' in pixel units (2, K)


def predict_trajectory(model: VisionDmpModel, image, rig=None, t_f=4.0, dt=1e-3,
                       yaw_sign=1.0):
    """Image -> DMP rollout in pixels -> optional task-plane projection + yaw."""
    h, w = image.shape[:2]
    tensor, _ = preprocess(image, None, input_size=model.config.input_size,
                           num_points=model.config.num_points)
    with torch.no_grad():
        wprime, _ = model(torch.from_numpy(tensor)[None])
    w_px = wprime[0].numpy() * np.array([[w], [h]], dtype=float)
    dmp = DmpModel(weights=w_px, basis=model.basis,
                   y0=w_px @ model.basis.eval(0.0),
                   goal=w_px @ model.basis.eval(1.0))
    cs = CanonicalSystem(tau=t_f, duration=t_f)
    pixel_traj = integrate(dmp, cs, dt=dt, frame="image_px",
                           fallback_identity=True)
    plane_traj = trajectory_to_plane(pixel_traj, rig) if rig is not None else None
    yaw = gripper_yaw(dmp.y0, dmp.goal, sign=yaw_sign)
    return Prediction(pixel_trajectory=pixel_traj, plane_trajectory=plane_traj,
                      yaw=yaw, weights=w_px)


# --- checkpoint container ----------------------------------------------------

def save_checkpoint(model: VisionDmpModel, path):
    header = {
        "model": model.config.to_dict(),
        "preprocessing": {
            "input_size": model.config.input_size,
            "normalization": "per-axis",
            "channel_scale": "1/255",
        },
        "params": model.parameter_spec(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    flat = model.flat_parameters().astype("<f8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(flat.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        flat = np.frombuffer(f.read(), dtype="<f8")
    model = VisionDmpModel(ModelConfig.from_dict(header["model"]))
    model.set_flat_parameters(flat)
    return model
