"""Pinhole camera geometry: image plane <-> known 3D task plane.

A pixel is back-projected to unit depth, the plane is expressed in the camera
frame, the ray is scaled to the ray/plane intersection depth and the hit point
is returned in the world frame.  The inverse map is standard pinhole
projection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dmp import Trajectory

RAY_EPS = 1e-9


class RayParallelToPlane(ValueError):
    pass


class PointBehindCamera(ValueError):
    pass


class DegenerateDirection(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


class CameraPose:
    """World-from-camera rigid transform."""

    def __init__(self, position, rotation):
        self.position = np.asarray(position, dtype=float).reshape(3)
        self.rotation = np.asarray(rotation, dtype=float).reshape(3, 3)
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(self.rotation)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation determinant must be +1")


class TaskPlane:
    """Plane through ``point`` with unit ``normal``, world frame."""

    def __init__(self, normal, point):
        self.normal = np.asarray(normal, dtype=float).reshape(3)
        self.point = np.asarray(point, dtype=float).reshape(3)
        if not math.isclose(float(np.linalg.norm(self.normal)), 1.0, abs_tol=1e-9):
            raise ValueError("plane normal must be unit length")


@dataclass
class CameraRig:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    plane: TaskPlane

    def to_dict(self):
        return {
            "intrinsics": {
                "cx": self.intrinsics.cx,
                "cy": self.intrinsics.cy,
                "fx": self.intrinsics.fx,
                "fy": self.intrinsics.fy,
            },
            "pose": {
                "p": list(self.pose.position),
                "R": list(self.pose.rotation.reshape(-1)),
            },
            "plane": {"n": list(self.plane.normal), "p": list(self.plane.point)},
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, rec):
        return cls(
            intrinsics=CameraIntrinsics(
                fx=rec["intrinsics"]["fx"],
                fy=rec["intrinsics"]["fy"],
                cx=rec["intrinsics"]["cx"],
                cy=rec["intrinsics"]["cy"],
            ),
            pose=CameraPose(
                position=rec["pose"]["p"],
                rotation=np.asarray(rec["pose"]["R"], dtype=float).reshape(3, 3),
            ),
            plane=TaskPlane(normal=rec["plane"]["n"], point=rec["plane"]["p"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def pixel_to_plane(pt, intr: CameraIntrinsics, pose: CameraPose, plane: TaskPlane):
    """Back-project a pixel onto the task plane; returns a world point."""
    x, y = float(pt[0]), float(pt[1])
    p_bar = np.array([(x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0])
    n_c = pose.rotation.T @ plane.normal
    p_c = pose.rotation.T @ (plane.point - pose.position)
    denom = float(n_c @ p_bar)
    if abs(denom) < RAY_EPS:
        raise RayParallelToPlane(f"viewing ray parallel to plane at pixel {pt}")
    lam = float(n_c @ p_c) / denom
    if lam <= 0:
        raise PointBehindCamera(f"plane intersection behind camera at pixel {pt}")
    return pose.rotation @ (lam * p_bar) + pose.position


def plane_to_pixel(p, intr: CameraIntrinsics, pose: CameraPose):
    """Pinhole-project a world point; inverse of pixel_to_plane on the plane."""
    p_c = pose.rotation.T @ (np.asarray(p, dtype=float) - pose.position)
    if p_c[2] < RAY_EPS:
        raise PointBehindCamera(f"point {p} has non-positive camera depth")
    return np.array(
        [intr.fx * p_c[0] / p_c[2] + intr.cx, intr.fy * p_c[1] / p_c[2] + intr.cy]
    )


def trajectory_to_plane(traj: Trajectory, rig: CameraRig):
    """Project every trajectory point onto the task plane, order preserved."""
    if traj.frame != "image_px":
        raise ValueError(f"expected an image_px trajectory, got {traj.frame!r}")
    out = []
    for i, pt in enumerate(traj.points):
        try:
            out.append(pixel_to_plane(pt, rig.intrinsics, rig.pose, rig.plane))
        except (RayParallelToPlane, PointBehindCamera) as err:
            raise type(err)(f"point {i}: {err}") from err
    return Trajectory(points=np.array(out), frame="task_plane_m",
                      timestamps=traj.timestamps)


def gripper_yaw(y0, goal, sign=1.0):
    """Gripper yaw with fingers normal to the start->goal direction.

    The +pi/2 offset (``sign`` flips it) is a convention; result wrapped to
    (-pi, pi].
    """
    d = np.asarray(goal, dtype=float) - np.asarray(y0, dtype=float)
    if np.linalg.norm(d) <= 1e-9:
        raise DegenerateDirection("start and goal coincide")
    yaw = math.atan2(d[1], d[0]) + sign * math.pi / 2
    wrapped = math.atan2(math.sin(yaw), math.cos(yaw))
    if wrapped == -math.pi:
        wrapped = math.pi
    return wrapped
