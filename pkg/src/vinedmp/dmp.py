"""Planar DMP with normalized Gaussian basis and start/goal spatial scaling.

The trajectory reference is y_x(x) = Ks (W phi(x) - y0_hat) + y0 where phi is a
partition-of-unity Gaussian basis over the phase x in [0, 1] and
Ks = diag((g - y0) ./ (g_hat - y0_hat)).  With zero coupling the second-order
dynamics track y_x exactly, so training-time trajectory evaluation never needs
integration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_STIFFNESS = 300.0
DEFAULT_OVERLAP = 0.5
SCALING_EPS = 1e-8


class DegenerateDemo(ValueError):
    """All demo points coincide; arc-length parameterization undefined."""


class DegenerateScaling(ValueError):
    """A component of (g_hat - y0_hat) is too small to divide by."""

    def __init__(self, axes, denom):
        self.axes = tuple(axes)
        self.denom = np.asarray(denom)
        super().__init__(
            f"learned start/goal displacement ~0 on axes {self.axes}; "
            "spatial scaling undefined"
        )


class NonFiniteState(FloatingPointError):
    """Integration produced NaN/inf state."""


class GaussianBasis:
    """K Gaussian kernels equally spaced over [0, 1], normalized to sum to 1.

    Inverse widths follow h_i = 1/(a_h * (c_{i+1} - c_i))^2, last one repeated;
    ``overlap`` (a_h) trades kernel locality against smoothness.
    """

    def __init__(self, num_kernels, overlap=DEFAULT_OVERLAP):
        if num_kernels < 2:
            raise ValueError("need at least 2 kernels")
        if overlap <= 0:
            raise ValueError("overlap must be positive")
        self.num_kernels = int(num_kernels)
        self.overlap = float(overlap)
        self.centers = np.linspace(0.0, 1.0, self.num_kernels)
        spacing = self.centers[1] - self.centers[0]
        h = np.full(self.num_kernels, 1.0 / (self.overlap * spacing) ** 2)
        self.inv_widths = h

    def __eq__(self, other):
        return (
            isinstance(other, GaussianBasis)
            and self.num_kernels == other.num_kernels
            and self.overlap == other.overlap
        )

    def __repr__(self):
        return f"GaussianBasis(num_kernels={self.num_kernels}, overlap={self.overlap})"

    def _raw(self, x):
        x = np.asarray(x, dtype=float)
        d = x[..., None] - self.centers
        e = -self.inv_widths * d * d
        # shift so the largest exponent is 0; normalization cancels the
        # factor and the sum can no longer underflow to zero
        return np.exp(e - e.max(axis=-1, keepdims=True))

    def eval(self, x):
        """Normalized activations phi(x); shape (..., K), rows sum to 1."""
        u = self._raw(x)
        return u / u.sum(axis=-1, keepdims=True)

    def eval_derivatives(self, x):
        """Analytic (dphi/dx, d2phi/dx2) of the normalized basis."""
        x = np.asarray(x, dtype=float)
        d = x[..., None] - self.centers
        e = -self.inv_widths * d * d
        u = np.exp(e - e.max(axis=-1, keepdims=True))
        du = -2.0 * self.inv_widths * d * u
        ddu = (-2.0 * self.inv_widths + 4.0 * self.inv_widths**2 * d * d) * u
        s = u.sum(axis=-1, keepdims=True)
        ds = du.sum(axis=-1, keepdims=True)
        dds = ddu.sum(axis=-1, keepdims=True)
        # quotient rule for u/s, twice
        dphi = du / s - u * ds / s**2
        ddphi = ddu / s - 2.0 * du * ds / s**2 - u * dds / s**2 + 2.0 * u * ds**2 / s**3
        return dphi, ddphi

    def matrix(self, xs):
        """Basis matrix Phi with shape (K, len(xs)); column j is phi(xs[j])."""
        return self.eval(np.asarray(xs)).T


@dataclass(frozen=True)
class CanonicalSystem:
    """Linear phase clock x(t) = t / tau, clamped at 1 after T_f (goal hold)."""

    tau: float = 4.0
    duration: float = 4.0

    def __post_init__(self):
        if self.tau <= 0 or self.duration <= 0:
            raise ValueError("tau and duration must be positive")

    def phase(self, t):
        return np.minimum(np.asarray(t, dtype=float) / self.tau, 1.0)

    def phase_rate(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t / self.tau < 1.0, 1.0 / self.tau, 0.0)


def phase_at(cs: CanonicalSystem, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    return cs.phase(t)


VALID_FRAMES = ("image_px", "normalized", "task_plane_m")


@dataclass
class Trajectory:
    """Ordered points in a tagged coordinate frame, optionally timestamped."""

    points: np.ndarray
    frame: str = "image_px"
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or len(self.points) < 2:
            raise ValueError("trajectory needs at least 2 points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("trajectory coordinates must be finite")
        if self.frame not in VALID_FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=float)
            if len(self.timestamps) != len(self.points):
                raise ValueError("timestamps length mismatch")
            if np.any(np.diff(self.timestamps) <= 0):
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.points)

    def to_dict(self):
        rec = {"frame": self.frame, "points": [list(p) for p in self.points]}
        if self.timestamps is not None:
            rec["timestamps"] = list(self.timestamps)
        return rec

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, rec):
        return cls(
            points=np.asarray(rec["points"], dtype=float),
            frame=rec["frame"],
            timestamps=np.asarray(rec["timestamps"], dtype=float)
            if "timestamps" in rec and rec["timestamps"] is not None
            else None,
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def arc_length_phases(points):
    """Normalized cumulative arc length of a polyline, in [0, 1]."""
    points = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = seg.sum()
    if total < 1e-12:
        raise DegenerateDemo("all demo points coincide")
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s / total


def resample_by_arclength(points, num_points):
    """Resample a polyline at uniform arc-length fractions."""
    points = np.asarray(points, dtype=float)
    s = arc_length_phases(points)
    target = np.linspace(0.0, 1.0, num_points)
    out = np.empty((num_points, points.shape[1]))
    for axis in range(points.shape[1]):
        out[:, axis] = np.interp(target, s, points[:, axis])
    return out


def fit_weights(demo: Trajectory, basis: GaussianBasis, method="LS", ridge=1e-8):
    """Fit W (n x K) so W phi(x) approximates the demo over arc-length phase.

    LS solves ridge-regularized normal equations; LWR takes per-kernel
    activation-weighted local means (normalized activations as the weights).
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    pts = np.asarray(demo.points, dtype=float)
    try:
        phases = arc_length_phases(pts)
    except DegenerateDemo:
        # constant demo: any phase assignment reproduces it exactly
        phases = np.linspace(0.0, 1.0, len(pts))
    phi = basis.eval(phases)  # (J, K)
    y = pts  # (J, n)
    if method == "LS":
        if ridge == 0.0:
            # min-norm solution tolerates rank deficiency (e.g. phase clusters)
            w, *_ = np.linalg.lstsq(phi, y, rcond=None)
        else:
            gram = phi.T @ phi + ridge * np.eye(basis.num_kernels)
            w = np.linalg.solve(gram, phi.T @ y)  # (K, n)
        return w.T
    if method == "LWR":
        denom = phi.sum(axis=0)  # (K,)
        w = (phi.T @ y) / denom[:, None]
        return w.T
    raise ValueError(f"unknown fit method {method!r}")


@dataclass
class DmpModel:
    """DMP parameters: weights, basis, gains and commanded start/goal."""

    weights: np.ndarray  # (n, K)
    basis: GaussianBasis
    y0: np.ndarray
    goal: np.ndarray
    stiffness: np.ndarray = None
    damping: np.ndarray = None
    scaling_eps: float = SCALING_EPS

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.y0 = np.asarray(self.y0, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        n = self.weights.shape[0]
        if self.weights.shape[1] != self.basis.num_kernels:
            raise ValueError("weights / basis size mismatch")
        if self.stiffness is None:
            self.stiffness = DEFAULT_STIFFNESS * np.eye(n)
        if self.damping is None:
            self.damping = 2.0 * np.sqrt(DEFAULT_STIFFNESS) * np.eye(n)
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        self.damping = np.asarray(self.damping, dtype=float)
        if not (
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.y0))
            and np.all(np.isfinite(self.goal))
        ):
            raise ValueError("non-finite model parameters")

    @property
    def dofs(self):
        return self.weights.shape[0]

    @property
    def learned_start(self):
        return self.weights @ self.basis.eval(0.0)

    @property
    def learned_goal(self):
        return self.weights @ self.basis.eval(1.0)

    @classmethod
    def from_demo(cls, demo: Trajectory, basis: GaussianBasis, method="LS", ridge=1e-8,
                  **kwargs):
        w = fit_weights(demo, basis, method=method, ridge=ridge)
        model = cls(weights=w, basis=basis,
                    y0=w @ basis.eval(0.0), goal=w @ basis.eval(1.0), **kwargs)
        return model


def scaling_matrix(model: DmpModel, fallback_identity=False):
    """Ks = diag((g - y0) ./ (g_hat - y0_hat)).

    With ``fallback_identity`` near-zero denominators get scale 1 on that axis
    instead of raising DegenerateScaling.
    """
    denom = model.learned_goal - model.learned_start
    bad = np.abs(denom) < model.scaling_eps
    if np.any(bad):
        if not fallback_identity:
            raise DegenerateScaling(np.nonzero(bad)[0], denom)
        scale = np.ones_like(denom)
        ok = ~bad
        scale[ok] = (model.goal - model.y0)[ok] / denom[ok]
        return np.diag(scale)
    return np.diag((model.goal - model.y0) / denom)


def reference_state(model: DmpModel, x, x_dot, ks=None, fallback_identity=False):
    """Closed-form reference position / velocity / acceleration at phase x."""
    if ks is None:
        ks = scaling_matrix(model, fallback_identity=fallback_identity)
    phi = model.basis.eval(x)
    dphi, ddphi = model.basis.eval_derivatives(x)
    y = ks @ (model.weights @ phi - model.learned_start) + model.y0
    yd = ks @ (model.weights @ dphi) * x_dot
    ydd = ks @ (model.weights @ ddphi) * x_dot**2
    return y, yd, ydd


def integrate(model: DmpModel, cs: CanonicalSystem, coupling=None, dt=1e-3,
              duration=None, frame="image_px", fallback_identity=False):
    """Fixed-step RK4 rollout of the transformation system.

    ``coupling``, when given, is called as coupling(t, y, yd) and returns an
    acceleration perturbation.  Phase clamps at 1 past T_f so the goal is held.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if duration is None:
        duration = cs.duration
    ks = scaling_matrix(model, fallback_identity=fallback_identity)

    def accel(t, y, yd):
        x = float(cs.phase(t))
        xd = float(cs.phase_rate(t))
        y_x, yd_x, ydd_x = reference_state(model, x, xd, ks=ks)
        a = ydd_x - model.damping @ (yd - yd_x) - model.stiffness @ (y - y_x)
        if coupling is not None:
            a = a + np.asarray(coupling(t, y, yd), dtype=float)
        return a

    n_steps = int(round(duration / dt))
    y = model.y0.copy()
    _, yd, _ = reference_state(model, 0.0, float(cs.phase_rate(0.0)), ks=ks)
    yd = yd.copy()
    times = [0.0]
    points = [y.copy()]
    for i in range(n_steps):
        t = i * dt
        k1v = accel(t, y, yd)
        k1y = yd
        k2v = accel(t + dt / 2, y + dt / 2 * k1y, yd + dt / 2 * k1v)
        k2y = yd + dt / 2 * k1v
        k3v = accel(t + dt / 2, y + dt / 2 * k2y, yd + dt / 2 * k2v)
        k3y = yd + dt / 2 * k2v
        k4v = accel(t + dt, y + dt * k3y, yd + dt * k3v)
        k4y = yd + dt * k3v
        y = y + dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        yd = yd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yd))):
            raise NonFiniteState(f"non-finite state at step {i + 1}")
        times.append((i + 1) * dt)
        points.append(y.copy())
    return Trajectory(points=np.array(points), frame=frame,
                      timestamps=np.array(times))
