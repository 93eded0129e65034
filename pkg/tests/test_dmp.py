import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinedmp.dmp import (CanonicalSystem, DegenerateScaling, DmpModel,
                         GaussianBasis, Trajectory, arc_length_phases,
                         fit_weights, integrate, phase_at, reference_state,
                         resample_by_arclength, scaling_matrix)


def brute_force_basis(num_kernels, overlap, x):
    """Direct transcription of the kernel formula, independent of GaussianBasis."""
    centers = [i / (num_kernels - 1) for i in range(num_kernels)]
    spacing = centers[1] - centers[0]
    h = [1.0 / (overlap * spacing) ** 2] * num_kernels
    raw = [math.exp(-h[k] * (x - centers[k]) ** 2) for k in range(num_kernels)]
    total = sum(raw)
    return [r / total for r in raw]


class TestBasis:
    def test_width_formula(self):
        basis = GaussianBasis(10, overlap=1.5)
        assert np.allclose(basis.inv_widths, 36.0)
        assert basis.centers[0] == 0.0 and basis.centers[-1] == 1.0
        assert np.all(np.diff(basis.centers) > 0)

    def test_matches_brute_force(self):
        basis = GaussianBasis(10, overlap=0.5)
        got = basis.eval(0.37)
        expected = brute_force_basis(10, 0.5, 0.37)
        assert np.allclose(got, expected, atol=1e-14)

    @given(st.integers(2, 40), st.floats(0.1, 3.0),
           st.floats(-0.5, 1.5, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_partition_of_unity(self, k, overlap, x):
        phi = GaussianBasis(k, overlap=overlap).eval(x)
        assert abs(phi.sum() - 1.0) < 1e-12
        assert np.all(phi >= 0) and np.all(phi <= 1)

    def test_derivative_sums_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            basis = GaussianBasis(int(rng.integers(2, 30)), rng.uniform(0.2, 2))
            dphi, ddphi = basis.eval_derivatives(rng.uniform(-0.2, 1.2))
            assert abs(dphi.sum()) < 1e-10
            assert abs(ddphi.sum()) < 1e-8

    def test_derivatives_match_finite_differences(self):
        basis = GaussianBasis(10, overlap=0.5)
        eps = 1e-6
        for x in np.linspace(0.05, 0.95, 7):
            fd = (basis.eval(x + eps) - basis.eval(x - eps)) / (2 * eps)
            dphi, _ = basis.eval_derivatives(x)
            assert np.abs(fd - dphi).max() / max(np.abs(fd).max(), 1.0) < 1e-4
            fd2 = (basis.eval(x + eps) - 2 * basis.eval(x)
                   + basis.eval(x - eps)) / eps**2
            _, ddphi = basis.eval_derivatives(x)
            assert np.abs(fd2 - ddphi).max() / max(np.abs(fd2).max(), 1.0) < 1e-3

    def test_symmetric_middle_kernel_flat_at_center(self):
        for overlap in (0.3, 0.5, 1.0, 2.0):
            dphi, _ = GaussianBasis(3, overlap=overlap).eval_derivatives(0.5)
            assert abs(dphi[1]) < 1e-12

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            GaussianBasis(1)
        with pytest.raises(ValueError):
            GaussianBasis(5, overlap=0.0)


def sine_demo(num=200):
    t = np.linspace(0, 1, num)
    pts = np.column_stack([100 + 400 * t, 240 + 80 * np.sin(4 * np.pi * t)])
    return Trajectory(points=pts)


def bbox_diag(points):
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


class TestFit:
    def test_constant_demo_exact(self):
        demo = Trajectory(points=np.tile([0.3, 0.7], (50, 1)))
        for k in (2, 5, 10):
            basis = GaussianBasis(k)
            w = fit_weights(demo, basis, "LS", ridge=0.0)
            rec = w @ basis.matrix(np.linspace(0, 1, 33))
            assert np.abs(rec - np.array([[0.3], [0.7]])).max() < 1e-10

    def test_sine_sweep_ls(self):
        demo = sine_demo()
        basis = GaussianBasis(30)
        w = fit_weights(demo, basis, "LS", ridge=1e-8)
        rec = (w @ basis.matrix(arc_length_phases(demo.points))).T
        rmse = np.sqrt(((rec - demo.points) ** 2).sum(axis=1).mean())
        assert rmse < 0.01 * bbox_diag(demo.points)

    def test_ls_lwr_agree_on_smooth_demo(self):
        demo = sine_demo()
        basis = GaussianBasis(30)
        wls = fit_weights(demo, basis, "LS")
        wlwr = fit_weights(demo, basis, "LWR")
        phases = np.linspace(0, 1, 400)
        gap = np.linalg.norm(
            wls @ basis.matrix(phases) - wlwr @ basis.matrix(phases), axis=0)
        assert gap.max() < 0.05 * bbox_diag(demo.points)

    def test_fit_idempotence(self):
        # demo whose arc-length phases equal its generating phases (fixed point)
        rng = np.random.default_rng(5)
        basis = GaussianBasis(12)
        w = rng.normal(scale=50, size=(2, 12)) + np.array([[300], [240]])
        s = np.linspace(0, 1, 300)
        for _ in range(2000):
            pts = (w @ basis.matrix(s)).T
            s_new = arc_length_phases(pts)
            if np.abs(s_new - s).max() < 1e-15:
                break
            s = s_new
        demo = Trajectory(points=pts)
        w2 = fit_weights(demo, basis, "LS", ridge=0.0)
        rec = (w2 @ basis.matrix(arc_length_phases(pts))).T
        rmse = np.sqrt(((rec - pts) ** 2).sum(axis=1).mean())
        assert rmse < 1e-8 * bbox_diag(pts)

    def test_resample_line_uniform(self):
        demo = np.array([[0.0, 0.0], [10.0, 5.0]])
        out = resample_by_arclength(demo, 50)
        expected = np.linspace([0, 0], [10, 5], 50)
        assert np.abs(out - expected).max() < 1e-9


def random_model(rng, k=10):
    basis = GaussianBasis(k)
    w = rng.normal(scale=30, size=(2, k)) + rng.normal(scale=100, size=(2, 1))
    y0_hat = w @ basis.eval(0.0)
    g_hat = w @ basis.eval(1.0)
    if np.any(np.abs(g_hat - y0_hat) < 1e-3):
        return random_model(rng, k)
    return DmpModel(weights=w, basis=basis,
                    y0=y0_hat + rng.normal(scale=20, size=2),
                    goal=g_hat + rng.normal(scale=20, size=2))


class TestScaling:
    def test_self_generalization_identity(self):
        model = random_model(np.random.default_rng(1))
        model.y0 = model.learned_start
        model.goal = model.learned_goal
        assert np.allclose(scaling_matrix(model), np.eye(2), atol=1e-12)

    def test_elementwise_division(self):
        basis = GaussianBasis(2)
        w = np.array([[0.0, 2.0], [0.0, 1.0]])  # g_hat - y0_hat = (2, 1)
        model = DmpModel(weights=w, basis=basis, y0=np.zeros(2),
                         goal=np.array([4.0, 3.0]))
        d = model.learned_goal - model.learned_start
        expected = np.diag(np.array([4.0, 3.0]) / d)
        assert np.allclose(scaling_matrix(model), expected, atol=1e-12)

    def test_linearity_in_commanded_span(self):
        model = random_model(np.random.default_rng(2))
        ks1 = scaling_matrix(model)
        model2 = DmpModel(weights=model.weights, basis=model.basis,
                          y0=model.y0, goal=model.y0 + 2 * (model.goal - model.y0))
        assert np.allclose(np.diag(scaling_matrix(model2)),
                           2 * np.diag(ks1), atol=1e-12)

    def test_degenerate_raises_and_fallback(self):
        basis = GaussianBasis(5)
        w = np.vstack([np.zeros(5), np.linspace(0, 4, 5)])  # x axis flat
        model = DmpModel(weights=w, basis=basis, y0=np.zeros(2),
                         goal=np.array([1.0, 2.0]))
        with pytest.raises(DegenerateScaling) as exc:
            scaling_matrix(model)
        assert 0 in exc.value.axes
        ks = scaling_matrix(model, fallback_identity=True)
        assert ks[0, 0] == 1.0


class TestReference:
    def test_endpoints(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            model = random_model(rng)
            y0, _, _ = reference_state(model, 0.0, 0.25)
            g, _, _ = reference_state(model, 1.0, 0.25)
            assert np.linalg.norm(y0 - model.y0) <= 1e-9 * (1 + np.linalg.norm(model.y0))
            assert np.linalg.norm(g - model.goal) <= 1e-9 * (1 + np.linalg.norm(model.goal))

    def test_velocity_matches_finite_difference(self):
        model = random_model(np.random.default_rng(4))
        eps = 1e-6
        x_dot = 0.25
        for x in np.linspace(0.1, 0.9, 9):
            yp, _, _ = reference_state(model, x + eps, x_dot)
            ym, _, _ = reference_state(model, x - eps, x_dot)
            fd = (yp - ym) / (2 * eps) * x_dot
            _, yd, _ = reference_state(model, x, x_dot)
            assert np.abs(fd - yd).max() / max(np.abs(fd).max(), 1.0) < 1e-4

    def test_two_evaluation_paths_agree(self):
        # precomputed Ks vs on-the-fly scaling, pointwise
        model = random_model(np.random.default_rng(6))
        ks = scaling_matrix(model)
        for x in np.linspace(0, 1, 21):
            direct, _, _ = reference_state(model, x, 0.25)
            manual = ks @ (model.weights @ model.basis.eval(x)
                           - model.learned_start) + model.y0
            assert np.allclose(direct, manual, atol=1e-12)


class TestIntegrate:
    def test_tracks_reference_without_coupling(self):
        demo = sine_demo()
        model = DmpModel.from_demo(demo, GaussianBasis(20))
        cs = CanonicalSystem(4.0, 4.0)
        traj = integrate(model, cs, dt=1e-3)
        phases = cs.phase(traj.timestamps)
        ref = np.array([reference_state(model, float(x), 0.25)[0] for x in phases])
        err = np.linalg.norm(traj.points - ref, axis=1).max()
        assert err < 1e-6 * bbox_diag(demo.points)

    def test_recovers_after_impulse(self):
        demo = sine_demo()
        model = DmpModel.from_demo(demo, GaussianBasis(20))
        cs = CanonicalSystem(4.0, 4.0)

        def coupling(t, y, yd):
            return np.array([8000.0, -8000.0]) if 0.5 <= t < 0.7 else np.zeros(2)

        traj = integrate(model, cs, coupling=coupling, dt=1e-3)
        phases = cs.phase(traj.timestamps)
        ref = np.array([reference_state(model, float(x), 0.25)[0] for x in phases])
        err = np.linalg.norm(traj.points - ref, axis=1)
        assert err[700] > 1e-3  # perturbation took effect
        after = err[720::10]  # skip the release transient
        decaying = after[after > 1e-6]  # below that, roundoff dominates
        assert np.all(np.diff(decaying) < 0)
        assert after[-1] < 1e-3

    def test_goal_hold_past_duration(self):
        model = DmpModel.from_demo(sine_demo(), GaussianBasis(20))
        cs = CanonicalSystem(4.0, 4.0)
        traj = integrate(model, cs, dt=1e-3, duration=8.0)
        assert np.linalg.norm(traj.points[-1] - model.goal) \
            < 1e-6 * (1 + np.linalg.norm(model.goal))


class TestCanonical:
    def test_phase_values(self):
        cs = CanonicalSystem(4.0, 4.0)
        assert phase_at(cs, 2.0) == 0.5
        assert phase_at(cs, 0.0) == 0.0
        assert phase_at(cs, 4.0) == 1.0
        assert phase_at(cs, 6.0) == 1.0

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            phase_at(CanonicalSystem(1.0, 1.0), -0.1)


class TestTrajectory:
    def test_roundtrip_json(self):
        traj = Trajectory(points=[[1.0, 2.0], [3.0, 4.5]], frame="image_px",
                          timestamps=[0.0, 0.1])
        again = Trajectory.from_json(traj.to_json())
        assert np.array_equal(again.points, traj.points)
        assert again.frame == traj.frame
        assert np.array_equal(again.timestamps, traj.timestamps)

    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(points=[[0.0, 0.0]])
        with pytest.raises(ValueError):
            Trajectory(points=[[0.0, np.nan], [1, 1]])
        with pytest.raises(ValueError):
            Trajectory(points=[[0, 0], [1, 1]], frame="voxels")
        with pytest.raises(ValueError):
            Trajectory(points=[[0, 0], [1, 1]], timestamps=[0.0, 0.0])
