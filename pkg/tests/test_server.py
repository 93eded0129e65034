import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vinedmp.scene import Scene, execute, generate_scene, oracle_demo
from vinedmp.server import create_app


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "demos")
    with TestClient(app) as c:
        yield c


def make_scene(client, seed=2):
    res = client.post("/api/scenes", json={"seed": seed})
    assert res.status_code == 200
    return res.json()


def good_demo(seed):
    scene = generate_scene(seed)
    return [[float(x), float(y)] for x, y in oracle_demo(scene, seed=seed).points]


class TestScenes:
    def test_create_and_fetch(self, client):
        rec = make_scene(client, seed=5)
        assert rec["seed"] == 5
        assert rec["image_size"] == [480, 640]
        full = client.get(f"/api/scenes/{rec['scene_id']}")
        assert full.status_code == 200
        scene = Scene.from_dict(full.json())
        assert scene.rng_seed == 5

    def test_seeded_scene_matches_local_generation(self, client):
        rec = make_scene(client, seed=7)
        got = client.get(f"/api/scenes/{rec['scene_id']}").json()
        assert Scene.from_dict(got).to_json() == generate_scene(7).to_json()

    def test_unknown_scene_404(self, client):
        assert client.get("/api/scenes/nope").status_code == 404

    def test_image_endpoint_png(self, client):
        rec = make_scene(client)
        res = client.get(f"/api/scenes/{rec['scene_id']}/image")
        assert res.status_code == 200
        assert res.headers["content-type"] == "image/png"
        assert res.content[:8] == b"\x89PNG\r\n\x1a\n"
        import cv2
        arr = cv2.imdecode(np.frombuffer(res.content, np.uint8), cv2.IMREAD_COLOR)
        assert arr.shape == (480, 640, 3)


class TestDemo:
    def test_demo_reports_success_without_mutating(self, client):
        rec = make_scene(client, seed=2)
        sid = rec["scene_id"]
        res = client.post(f"/api/scenes/{sid}/demo",
                          json={"points": good_demo(2)})
        assert res.status_code == 200
        body = res.json()
        assert body["success"] is True
        assert body["final_occlusion"] <= 0.1
        # scene state on the server must still be the rest state
        again = client.post(f"/api/scenes/{sid}/demo",
                            json={"points": good_demo(2)})
        assert again.json() == body

    def test_failed_demo_reported(self, client):
        rec = make_scene(client, seed=2)
        res = client.post(f"/api/scenes/{rec['scene_id']}/demo",
                          json={"points": [[1.0, 1.0], [2.0, 2.0]]})
        assert res.status_code == 200
        assert res.json()["success"] is False

    def test_bad_payload_400(self, client):
        rec = make_scene(client, seed=2)
        sid = rec["scene_id"]
        assert client.post(f"/api/scenes/{sid}/demo",
                           json={"points": [[1.0, 1.0]]}).status_code == 400
        assert client.post(f"/api/scenes/{sid}/demo",
                           json={"points": [[-5.0, 1.0], [2.0, 2.0]]}
                           ).status_code == 400


class TestAccept:
    def test_accept_persists_sample(self, client, tmp_path):
        rec = make_scene(client, seed=2)
        res = client.post(f"/api/scenes/{rec['scene_id']}/accept",
                          json={"points": good_demo(2)})
        assert res.status_code == 200
        sample_id = res.json()["sample_id"]
        root = tmp_path / "demos"
        assert (root / "manifest.json").is_file()
        assert (root / "images" / f"{sample_id}.png").is_file()
        assert (root / "trajs" / f"{sample_id}.json").is_file()
        assert (root / "scenes" / f"{sample_id}.json").is_file()

    def test_unsuccessful_accept_409(self, client):
        rec = make_scene(client, seed=2)
        res = client.post(f"/api/scenes/{rec['scene_id']}/accept",
                          json={"points": [[1.0, 1.0], [2.0, 2.0]]})
        assert res.status_code == 409


class TestPredict:
    def test_no_model_409(self, client):
        rec = make_scene(client)
        res = client.get(f"/api/predict/{rec['scene_id']}")
        assert res.status_code == 409

    def test_predict_with_checkpoint(self, tmp_path):
        from vinedmp.learner import ModelConfig, VisionDmpModel, save_checkpoint
        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(VisionDmpModel(ModelConfig()), ckpt)
        app = create_app(tmp_path / "demos", checkpoint_path=ckpt)
        with TestClient(app) as c:
            rec = make_scene(c)
            res = c.get(f"/api/predict/{rec['scene_id']}")
            assert res.status_code == 200
            body = res.json()
            assert len(body["points"]) == 50
            assert all(len(p) == 2 for p in body["points"])
            assert -np.pi < body["yaw"] <= np.pi


class TestTrainJob:
    def test_full_job_lifecycle(self, client):
        # persist a few demos, then train a tiny model through the API
        for seed in (2, 3, 4):
            rec = make_scene(client, seed=seed)
            res = client.post(f"/api/scenes/{rec['scene_id']}/accept",
                              json={"points": good_demo(seed)})
            assert res.status_code == 200
        res = client.post("/api/train", json={"epochs": 2, "batch_size": 2,
                                              "input_size": 32,
                                              "num_kernels": 5})
        assert res.status_code == 200
        job_id = res.json()["job_id"]
        for _ in range(240):
            status = client.get(f"/api/jobs/{job_id}").json()
            if status["state"] in ("done", "failed"):
                break
            time.sleep(0.25)
        assert status["state"] == "done", status
        assert status["epoch"] == 2
        assert len(status["train_losses"]) == 2
        # the trained model is live for prediction
        rec = make_scene(client, seed=9)
        assert client.get(f"/api/predict/{rec['scene_id']}").status_code == 200

    def test_concurrent_train_409(self, client):
        for seed in (2, 3):
            rec = make_scene(client, seed=seed)
            client.post(f"/api/scenes/{rec['scene_id']}/accept",
                        json={"points": good_demo(seed)})
        first = client.post("/api/train", json={"epochs": 3, "batch_size": 2,
                                                "input_size": 32,
                                                "num_kernels": 5})
        assert first.status_code == 200
        second = client.post("/api/train", json={"epochs": 1})
        assert second.status_code == 409
        job_id = first.json()["job_id"]
        for _ in range(240):
            if client.get(f"/api/jobs/{job_id}").json()["state"] \
                    in ("done", "failed"):
                break
            time.sleep(0.25)

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/nope").status_code == 404

    def test_train_without_demos_fails_cleanly(self, client):
        res = client.post("/api/train", json={"epochs": 1})
        assert res.status_code == 200
        job_id = res.json()["job_id"]
        for _ in range(60):
            status = client.get(f"/api/jobs/{job_id}").json()
            if status["state"] in ("done", "failed"):
                break
            time.sleep(0.25)
        assert status["state"] == "failed"
        assert status["error"]
