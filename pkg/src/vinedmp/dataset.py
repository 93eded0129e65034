"""Dataset generation and manifest persistence.

Layout under the dataset root (fixed names, golden-test friendly):
    manifest.json
    images/<id>.png
    trajs/<id>.json
    scenes/<id>.json      (originals only)
    aug_config.json       (when augmentation was applied)

Only samples whose oracle demonstration actually succeeds in the simulator are
persisted; the generator draws fresh scene seeds until the requested count of
successful samples exists.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .augment import AugmentationConfig, apply, replica_seed, sample_transform
from .dmp import Trajectory
from .scene import (DEFAULT_GRIPPER_RADIUS, OracleFailed, Scene, SceneConfig,
                    execute, generate_scene, oracle_demo, render)

SPLITS = ("train", "dev", "test")


class DatasetError(ValueError):
    pass


@dataclass
class SampleRef:
    id: str
    image: str  # path relative to root
    trajectory: str
    split: str
    scene: str | None = None
    parent: str | None = None

    def to_dict(self):
        rec = {"id": self.id, "image": self.image, "trajectory": self.trajectory,
               "split": self.split}
        if self.scene is not None:
            rec["scene"] = self.scene
        if self.parent is not None:
            rec["parent"] = self.parent
        return rec

    @classmethod
    def from_dict(cls, rec):
        return cls(id=rec["id"], image=rec["image"], trajectory=rec["trajectory"],
                   split=rec["split"], scene=rec.get("scene"),
                   parent=rec.get("parent"))


class Dataset:
    """Manifest-backed sample store rooted at a directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.samples: list[SampleRef] = []
        self.image_size = None
        self.provenance = {}

    @property
    def manifest_path(self):
        return self.root / "manifest.json"

    def manifest_dict(self):
        return {
            "image_size": list(self.image_size) if self.image_size else None,
            "provenance": self.provenance,
            "samples": [s.to_dict() for s in self.samples],
        }

    def save_manifest(self):
        text = json.dumps(self.manifest_dict(), sort_keys=True, indent=2) + "\n"
        self.manifest_path.write_text(text)

    @classmethod
    def load(cls, root):
        ds = cls(root)
        if not ds.manifest_path.exists():
            raise DatasetError(f"no manifest.json under {root}")
        rec = json.loads(ds.manifest_path.read_text())
        ds.image_size = tuple(rec["image_size"]) if rec.get("image_size") else None
        ds.provenance = rec.get("provenance", {})
        ds.samples = [SampleRef.from_dict(s) for s in rec["samples"]]
        ids = [s.id for s in ds.samples]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate sample ids in manifest")
        for s in ds.samples:
            for rel in (s.image, s.trajectory, s.scene):
                if rel is not None and not (ds.root / rel).exists():
                    raise DatasetError(f"manifest entry {s.id}: missing {rel}")
        return ds

    def split_samples(self, split):
        return [s for s in self.samples if s.split == split]

    def load_image(self, ref: SampleRef):
        img = cv2.imread(str(self.root / ref.image), cv2.IMREAD_COLOR)
        if img is None:
            raise DatasetError(f"unreadable image {ref.image}")
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)

    def load_trajectory(self, ref: SampleRef):
        return Trajectory.from_json((self.root / ref.trajectory).read_text())

    def load_scene(self, ref: SampleRef):
        if ref.scene is None:
            raise DatasetError(f"sample {ref.id} has no stored scene")
        return Scene.from_json((self.root / ref.scene).read_text())

    def load_pairs(self, split):
        return [(self.load_image(s), self.load_trajectory(s))
                for s in self.split_samples(split)]

    def add_sample(self, sample_id, image, traj: Trajectory, split,
                   scene: Scene | None = None, parent=None):
        if any(s.id == sample_id for s in self.samples):
            raise DatasetError(f"duplicate sample id {sample_id}")
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        (self.root / "images").mkdir(parents=True, exist_ok=True)
        (self.root / "trajs").mkdir(exist_ok=True)
        image_rel = f"images/{sample_id}.png"
        traj_rel = f"trajs/{sample_id}.json"
        write_png(self.root / image_rel, image)
        (self.root / traj_rel).write_text(
            json.dumps(traj.to_dict(), sort_keys=True) + "\n")
        scene_rel = None
        if scene is not None:
            (self.root / "scenes").mkdir(exist_ok=True)
            scene_rel = f"scenes/{sample_id}.json"
            (self.root / scene_rel).write_text(scene.to_json() + "\n")
        ref = SampleRef(id=sample_id, image=image_rel, trajectory=traj_rel,
                        split=split, scene=scene_rel, parent=parent)
        self.samples.append(ref)
        if self.image_size is None:
            self.image_size = image.shape[:2]
        return ref


def write_png(path, rgb_image):
    ok = cv2.imwrite(str(path), cv2.cvtColor(rgb_image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise DatasetError(f"could not write {path}")


def parse_split_spec(spec, count):
    """'80/10/10' style spec: percentages if they sum to 100, else counts."""
    try:
        parts = [int(p) for p in str(spec).split("/")]
    except ValueError:
        raise DatasetError(f"bad split spec {spec!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise DatasetError(f"bad split spec {spec!r}")
    if sum(parts) == count:
        return tuple(parts)
    if sum(parts) == 100:
        n_train = round(parts[0] * count / 100)
        n_dev = round(parts[1] * count / 100)
        return (n_train, n_dev, count - n_train - n_dev)
    raise DatasetError(
        f"split {spec!r} sums to neither 100 (percent) nor {count} (counts)")


def generate_dataset(out_dir, count, seed, split="80/10/10", augment_factor=0,
                     image_size=(480, 640), busy_background=False,
                     scene_config: SceneConfig | None = None,
                     gripper_radius=DEFAULT_GRIPPER_RADIUS, progress=None):
    """Generate scenes + oracle demos, keep only successes, write a dataset.

    Deterministic in all arguments.  Partial output is removed on failure.
    Augmentation, when requested, expands the train split only.
    """
    out_dir = Path(out_dir)
    counts = parse_split_spec(split, count)
    if scene_config is None:
        scene_config = SceneConfig(image_size=tuple(image_size),
                                   background="busy" if busy_background else "plain")
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        ds = Dataset(out_dir)
        ds.image_size = tuple(image_size)
        kept = []
        scene_seed = int(seed)
        while len(kept) < count:
            try:
                scene = generate_scene(scene_seed, scene_config)
                traj = oracle_demo(scene, seed=scene_seed,
                                   gripper_radius=gripper_radius)
            except OracleFailed:
                scene_seed += 1
                continue
            # keep-only-successful: re-execute on a clean clone before storing
            if execute(scene.clone(), traj, gripper_radius=gripper_radius).success:
                kept.append((scene, traj))
                if progress is not None:
                    progress(len(kept), count)
            scene_seed += 1

        order = np.random.default_rng([int(seed), 0xA55]).permutation(count)
        split_of = {}
        offset = 0
        for name, n in zip(SPLITS, counts):
            for i in order[offset:offset + n]:
                split_of[int(i)] = name
            offset += n
        originals = []
        for i, (scene, traj) in enumerate(kept):
            sid = f"s{i:04d}"
            image = render(scene)
            ds.add_sample(sid, image, traj, split_of[i], scene=scene)
            originals.append((sid, image, traj, split_of[i]))

        aug_config = None
        if augment_factor > 0:
            aug_config = AugmentationConfig(factor=int(augment_factor))
            train_orig = [s for s in originals if s[3] == "train"]
            for sid, image, traj, sp in train_orig:
                for r in range(aug_config.factor):
                    t = sample_transform(aug_config,
                                         replica_seed(seed, sid, r),
                                         image.shape[:2])
                    aug_img, aug_traj = apply(image, traj, t)
                    ds.add_sample(f"{sid}_aug{r:03d}", aug_img, aug_traj, sp,
                                  parent=sid)
            (out_dir / "aug_config.json").write_text(aug_config.to_json())

        ds.provenance = {
            "base_seed": int(seed),
            "count": int(count),
            "split": str(split),
            "augment_factor": int(augment_factor),
            "gripper_radius": float(gripper_radius),
            "scene_config": scene_config.to_dict(),
        }
        ds.save_manifest()
        return ds
    except Exception:
        if created:
            shutil.rmtree(out_dir, ignore_errors=True)
        raise
