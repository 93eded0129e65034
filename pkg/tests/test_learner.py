import numpy as np
import pytest
import torch

from vinedmp.learner import (ImageTooSmall, ModelConfig, TrainConfig,
                             VisionDmpModel, backward, evaluate_rmse,
                             load_checkpoint, predict_trajectory, preprocess,
                             prepare_split, save_checkpoint, smooth_l1_loss,
                             train)
from vinedmp.dmp import Trajectory
from vinedmp.scene import generate_scene, oracle_demo, render

TINY = ModelConfig(input_size=16, channels=(4, 4), num_kernels=5,
                   num_points=10, seed=0)


def tiny_batch(n=3, seed=0):
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.uniform(0, 1, size=(n, 3, 16, 16)))
    y = torch.from_numpy(rng.uniform(0, 1, size=(n, 10, 2)))
    return x, y


class TestModel:
    def test_output_shapes(self):
        model = VisionDmpModel(TINY)
        x, _ = tiny_batch()
        wprime, traj = model(x)
        assert wprime.shape == (3, 2, 5)
        assert traj.shape == (3, 10, 2)

    def test_trajectory_is_linear_readout_of_weights(self):
        # traj must equal W' Phi exactly, no integration in the loop
        model = VisionDmpModel(TINY)
        x, _ = tiny_batch()
        wprime, traj = model(x)
        phi = model.phi.numpy()  # (K, M)
        manual = np.einsum("bnk,km->bmn", wprime.detach().numpy(),
                           phi)
        assert np.abs(manual - traj.detach().numpy()).max() < 1e-14

    def test_seeded_init_deterministic(self):
        a = VisionDmpModel(TINY).flat_parameters()
        b = VisionDmpModel(TINY).flat_parameters()
        assert np.array_equal(a, b)
        c = VisionDmpModel(ModelConfig(**{**TINY.to_dict(), "seed": 1}))
        assert not np.array_equal(a, c.flat_parameters())

    def test_float64_throughout(self):
        model = VisionDmpModel(TINY)
        for p in model.parameters():
            assert p.dtype == torch.float64
        assert model.flat_parameters().dtype == np.float64

    def test_flat_roundtrip(self):
        model = VisionDmpModel(TINY)
        flat = model.flat_parameters()
        perturbed = flat + 0.01
        model.set_flat_parameters(perturbed)
        assert np.array_equal(model.flat_parameters(), perturbed)
        with pytest.raises(ValueError):
            model.set_flat_parameters(flat[:-1])


class TestGradient:
    def test_matches_finite_differences_everywhere(self):
        model = VisionDmpModel(TINY)
        x, y = tiny_batch()
        _, grad = backward(model, x, y)
        flat = model.flat_parameters()
        eps = 1e-6
        fd = np.empty_like(flat)
        for i in range(len(flat)):
            up, dn = flat.copy(), flat.copy()
            up[i] += eps
            dn[i] -= eps
            model.set_flat_parameters(up)
            with torch.no_grad():
                lp = float(smooth_l1_loss(model(x)[1], y))
            model.set_flat_parameters(dn)
            with torch.no_grad():
                lm = float(smooth_l1_loss(model(x)[1], y))
            fd[i] = (lp - lm) / (2 * eps)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-4, f"worst rel err {rel.max():.2e}"


class TestLoss:
    def test_quadratic_region(self):
        pred = torch.tensor([[0.5]], dtype=torch.float64)
        target = torch.tensor([[0.2]], dtype=torch.float64)
        assert float(smooth_l1_loss(pred, target)) == pytest.approx(0.5 * 0.09)

    def test_linear_region(self):
        pred = torch.tensor([[3.0]], dtype=torch.float64)
        target = torch.tensor([[0.0]], dtype=torch.float64)
        assert float(smooth_l1_loss(pred, target)) == pytest.approx(2.5)

    def test_beta_boundary_continuous(self):
        t = torch.tensor([[0.0]], dtype=torch.float64)
        below = float(smooth_l1_loss(torch.tensor([[0.999999]], dtype=torch.float64), t))
        above = float(smooth_l1_loss(torch.tensor([[1.000001]], dtype=torch.float64), t))
        assert abs(below - above) < 1e-5

    def test_numpy_path_agrees(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        got = smooth_l1_loss(a, b, beta=0.7)
        want = float(smooth_l1_loss(torch.from_numpy(a), torch.from_numpy(b), beta=0.7))
        assert got == pytest.approx(want, abs=1e-12)


class TestPreprocess:
    def test_shapes_and_range(self):
        img = render(generate_scene(1))
        traj = oracle_demo(generate_scene(1))
        x, y = preprocess(img, traj, input_size=64, num_points=50)
        assert x.shape == (3, 64, 64)
        assert 0.0 <= x.min() and x.max() <= 1.0
        assert y.shape == (50, 2)
        assert np.all(y >= 0) and np.all(y <= 1)

    def test_normalization_per_axis(self):
        img = np.zeros((480, 640, 3), dtype=np.uint8)
        traj = Trajectory(points=[[0.0, 0.0], [640.0, 480.0]])
        _, y = preprocess(img, traj, input_size=16, num_points=2)
        assert np.allclose(y, [[0, 0], [1, 1]])

    def test_too_small_rejected(self):
        with pytest.raises(ImageTooSmall):
            preprocess(np.zeros((8, 8, 3), dtype=np.uint8), None, input_size=16)


class TestTraining:
    def test_lr_schedule(self):
        cfg = TrainConfig(lr0=1e-3, halve_every=40)
        assert cfg.lr_at(0) == 1e-3
        assert cfg.lr_at(39) == 1e-3
        assert cfg.lr_at(40) == 5e-4
        assert cfg.lr_at(80) == 2.5e-4

    def test_deterministic_and_best_epoch_restore(self):
        x, y = tiny_batch(n=8, seed=3)
        d = {"train": (x, y), "dev": tiny_batch(n=4, seed=4)}
        cfg = TrainConfig(epochs=5, batch_size=4, seed=0)
        m1 = VisionDmpModel(TINY)
        r1 = train(m1, d, cfg)
        m2 = VisionDmpModel(TINY)
        r2 = train(m2, d, cfg)
        assert np.array_equal(m1.flat_parameters(), m2.flat_parameters())
        assert r1.dev_losses == r2.dev_losses
        assert r1.best_epoch == int(np.argmin(r1.dev_losses))

    def test_loss_decreases(self):
        x, y = tiny_batch(n=16, seed=5)
        d = {"train": (x, y), "dev": (x, y)}
        model = VisionDmpModel(TINY)
        report = train(model, d, TrainConfig(epochs=30, batch_size=8, seed=0))
        assert report.dev_losses[-1] < report.dev_losses[0] * 0.5

    def test_requires_splits(self):
        x, y = tiny_batch()
        with pytest.raises(ValueError):
            train(VisionDmpModel(TINY), {"train": (x, y)})


class TestEvaluate:
    def test_rmse_formula(self):
        # build a fake model output by comparing two identical tensors offset
        model = VisionDmpModel(TINY)
        x, _ = tiny_batch(n=2)
        with torch.no_grad():
            _, pred = model(x)
        y = pred + torch.tensor([3.0 / 640, 4.0 / 480], dtype=torch.float64)
        mean, std = evaluate_rmse(model, (x, y), image_size=(480, 640))
        # every point off by exactly (3, 4) px -> rmse 5 for every sample
        assert mean == pytest.approx(5.0, abs=1e-9)
        assert std == pytest.approx(0.0, abs=1e-9)


class TestPredict:
    def test_endpoints_and_yaw(self):
        model = VisionDmpModel(ModelConfig(input_size=16, channels=(4, 4),
                                           num_kernels=5, num_points=10))
        img = render(generate_scene(1))
        pred = predict_trajectory(model, img, t_f=1.0, dt=1e-2)
        assert pred.pixel_trajectory.frame == "image_px"
        w_px = pred.weights
        start = w_px @ model.basis.eval(0.0)
        goal = w_px @ model.basis.eval(1.0)
        assert np.allclose(pred.pixel_trajectory.points[0], start, atol=1e-8)
        assert np.allclose(pred.pixel_trajectory.points[-1], goal, atol=1e-4)
        assert -np.pi < pred.yaw <= np.pi


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = VisionDmpModel(TINY)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        again = load_checkpoint(path)
        assert again.config == model.config
        assert np.array_equal(again.flat_parameters(), model.flat_parameters())
        # byte-identical on rewrite
        p2 = tmp_path / "model2.ckpt"
        save_checkpoint(again, p2)
        assert path.read_bytes() == p2.read_bytes()

    def test_magic_and_corruption(self, tmp_path):
        model = VisionDmpModel(TINY)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        assert raw[:8] == b"RDMPCKPT"
        raw[0] ^= 0xFF
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_checkpoint(bad)
        truncated = tmp_path / "short.ckpt"
        truncated.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ValueError):
            load_checkpoint(truncated)


class TestPrepareSplit:
    def test_stacks_pairs(self):
        scene = generate_scene(1)
        img = render(scene)
        demo = oracle_demo(scene)
        x, y = prepare_split([(img, demo), (img, demo)], TINY)
        assert x.shape == (2, 3, 16, 16) and y.shape == (2, 10, 2)
        assert x.dtype == torch.float64 and y.dtype == torch.float64
