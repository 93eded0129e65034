"""Joint image + trajectory augmentation.

Geometry is a single homography applied to both the image (bilinear warp) and
the trajectory (exact homogeneous-coordinates action); photometric jitter and
noise touch only the image.  Everything is deterministic in (config, seed).
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import cv2
import numpy as np

from .dmp import Trajectory


class DegenerateHomography(ValueError):
    pass


@dataclass
class AugmentationConfig:
    translation_frac: float = 0.10
    rotation_deg: float = 15.0
    scale_range: tuple = (0.85, 1.15)
    hflip_prob: float = 0.5
    perspective_distortion: float = 0.15
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05  # turns
    gaussian_noise_sigma: float = 5.0  # 8-bit intensity units
    factor: int = 100

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError("scale range must be positive with lo <= hi")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must be a probability")
        if not 0 <= self.perspective_distortion < 1:
            raise ValueError("perspective_distortion must be in [0, 1)")

    def to_dict(self):
        d = dict(self.__dict__)
        d["scale_range"] = list(self.scale_range)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, rec):
        rec = dict(rec)
        rec["scale_range"] = tuple(rec["scale_range"])
        return cls(**rec)


@dataclass
class GeometricTransform:
    matrix: np.ndarray  # 3x3 homography, pixel coords

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(self.matrix)) <= 1e-12:
            raise ValueError("homography is not invertible")

    def apply_points(self, points):
        pts = np.asarray(points, dtype=float)
        homo = np.hstack([pts, np.ones((len(pts), 1))]) @ self.matrix.T
        w = homo[:, 2]
        if np.any(np.abs(w) < 1e-9):
            raise DegenerateHomography("point mapped to w ~ 0")
        return homo[:, :2] / w[:, None]


@dataclass
class SampleTransform:
    geometry: GeometricTransform
    brightness: float  # multiplicative factor
    contrast: float
    saturation: float
    hue_shift: float  # turns
    noise_sigma: float
    noise_seed: int

    @property
    def neutral_photometrics(self):
        return (self.brightness == 1.0 and self.contrast == 1.0
                and self.saturation == 1.0 and self.hue_shift == 0.0
                and self.noise_sigma == 0.0)


def _translation(tx, ty):
    m = np.eye(3)
    m[0, 2], m[1, 2] = tx, ty
    return m


def _about_center(m, cx, cy):
    return _translation(cx, cy) @ m @ _translation(-cx, -cy)


def sample_transform(config: AugmentationConfig, seed, image_size):
    """Draw one joint transform; H = flip @ perspective @ rotation @ scale @ translation."""
    h, w = image_size
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    rng = np.random.default_rng(seed)

    tx = rng.uniform(-1, 1) * config.translation_frac * w
    ty = rng.uniform(-1, 1) * config.translation_frac * h
    rot = math.radians(rng.uniform(-1, 1) * config.rotation_deg)
    scale = rng.uniform(*config.scale_range)
    flip = rng.random() < config.hflip_prob
    persp_off = rng.uniform(-1, 1, size=(4, 2)) * config.perspective_distortion \
        * np.array([w, h])

    h_trans = _translation(tx, ty)
    h_scale = np.eye(3) if scale == 1.0 else _about_center(np.diag([scale, scale, 1.0]), cx, cy)
    if rot == 0.0:
        h_rot = np.eye(3)
    else:
        c, s = math.cos(rot), math.sin(rot)
        h_rot = _about_center(np.array([[c, -s, 0.0], [s, c, 0.0], [0, 0, 1.0]]), cx, cy)
    if config.perspective_distortion == 0.0:
        h_persp = np.eye(3)
    else:
        corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]],
                           dtype=np.float32)
        h_persp = cv2.getPerspectiveTransform(
            corners, (corners + persp_off).astype(np.float32)).astype(float)
    if flip:
        h_flip = np.array([[-1.0, 0.0, w - 1.0], [0, 1.0, 0], [0, 0, 1.0]])
    else:
        h_flip = np.eye(3)
    matrix = h_flip @ h_persp @ h_rot @ h_scale @ h_trans

    db = rng.uniform(-1, 1) * config.brightness
    dc = rng.uniform(-1, 1) * config.contrast
    ds = rng.uniform(-1, 1) * config.saturation
    dh = rng.uniform(-1, 1) * config.hue
    noise_seed = int(rng.integers(0, 2**31 - 1))
    return SampleTransform(
        geometry=GeometricTransform(matrix=matrix),
        brightness=1.0 + db if config.brightness else 1.0,
        contrast=1.0 + dc if config.contrast else 1.0,
        saturation=1.0 + ds if config.saturation else 1.0,
        hue_shift=dh if config.hue else 0.0,
        noise_sigma=config.gaussian_noise_sigma,
        noise_seed=noise_seed,
    )


def _border_color(image):
    border = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]])
    return np.median(border, axis=0)


def _apply_photometrics(image, t: SampleTransform):
    img = image.astype(np.float64)
    if t.brightness != 1.0:
        img = img * t.brightness
    if t.contrast != 1.0:
        mean = img.mean()
        img = (img - mean) * t.contrast + mean
    if t.saturation != 1.0:
        gray = img @ np.array([0.299, 0.587, 0.114])
        img = gray[..., None] + (img - gray[..., None]) * t.saturation
    if t.hue_shift != 0.0:
        hsv = cv2.cvtColor(np.clip(img, 0, 255).astype(np.uint8),
                           cv2.COLOR_RGB2HSV).astype(np.float64)
        hsv[..., 0] = np.mod(hsv[..., 0] + t.hue_shift * 180.0, 180.0)
        img = cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB).astype(np.float64)
    if t.noise_sigma > 0.0:
        nrng = np.random.default_rng(t.noise_seed)
        img = img + nrng.normal(0.0, t.noise_sigma, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def apply(image, traj: Trajectory, transform: SampleTransform):
    """Warp the image and map the trajectory through the same homography."""
    h, w = image.shape[:2]
    geo = transform.geometry
    if np.allclose(geo.matrix, np.eye(3)):
        warped = image.copy()
    else:
        fill = tuple(float(c) for c in _border_color(image))
        warped = cv2.warpPerspective(
            image, geo.matrix, (w, h), flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT, borderValue=fill)
    pts = geo.apply_points(traj.points)
    pts[:, 0] = np.clip(pts[:, 0], 0.0, w - 1.0)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, h - 1.0)
    out_traj = Trajectory(points=pts, frame=traj.frame, timestamps=traj.timestamps)
    if not transform.neutral_photometrics:
        warped = _apply_photometrics(warped, transform)
    return warped, out_traj


def replica_seed(base_seed, sample_id, replica_index):
    """Stable per-replica seed, independent of processing order."""
    return int(base_seed) + zlib.crc32(f"{sample_id}:{replica_index}".encode())


def augment_dataset(samples, config: AugmentationConfig, base_seed):
    """Expand (id, image, traj, split) records by config.factor; originals kept.

    Returns a list of (id, image, traj, split, parent_id) tuples; originals
    have parent_id None.  Augmented replicas inherit the parent's split.
    """
    if not samples:
        raise ValueError("no samples to augment")
    out = []
    for sid, image, traj, split in samples:
        out.append((sid, image, traj, split, None))
    for sid, image, traj, split in samples:
        for r in range(config.factor):
            t = sample_transform(config, replica_seed(base_seed, sid, r),
                                 image.shape[:2])
            aug_img, aug_traj = apply(image, traj, t)
            out.append((f"{sid}_aug{r:03d}", aug_img, aug_traj, split, sid))
    return out
