"""Trajectory/dataset containers and the TBCD binary dataset format.

A dataset is a list of (image, action) trajectories with provenance tags
(clean / zigzag / non_stop / zigzag_non_stop), driving directions, and a
disjoint train/test split; noisy trajectories may only appear in the
training split. Files carry magic "TBCD", a fixed-layout header, then the
frame blobs as 32-bit little-endian floats, trajectory-major, each
trajectory's images followed by its actions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"TBCD"
DATASET_VERSION = 1

TAGS = ("clean", "zigzag", "non_stop", "zigzag_non_stop")
DIRECTIONS = ("counterclockwise", "clockwise")


@dataclass
class Trajectory:
    images: np.ndarray   # (L, C, H, W) float32, pixel values in [0, 1]
    actions: np.ndarray  # (L, A) float32
    tag: str
    direction: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if len(self.images) == 0 or len(self.images) != len(self.actions):
            raise ValueError("trajectory must be non-empty with matching image/action counts")
        if self.tag not in TAGS:
            raise ValueError(f"unknown provenance tag {self.tag!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    fps: float
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def __post_init__(self):
        self.train_ids = tuple(self.train_ids)
        self.test_ids = tuple(self.test_ids)
        ids = set(range(len(self.trajectories)))
        if set(self.train_ids) | set(self.test_ids) != ids or set(self.train_ids) & set(self.test_ids):
            raise ValueError("train/test ids must partition the trajectory indices")
        for i in self.test_ids:
            if self.trajectories[i].tag != "clean":
                raise ValueError("noisy trajectories may only appear in the training split")

    def split_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated (images, actions) over the split, in id order."""
        ids = self.train_ids if split == "train" else self.test_ids
        images = np.concatenate([self.trajectories[i].images for i in ids])
        actions = np.concatenate([self.trajectories[i].actions for i in ids])
        return images, actions

    def summary(self) -> dict:
        counts = {tag: 0 for tag in TAGS}
        for t in self.trajectories:
            counts[t.tag] += 1
        return {
            "n_trajectories": len(self.trajectories),
            "tag_counts": counts,
            "n_train": len(self.train_ids),
            "n_test": len(self.test_ids),
            "n_train_frames": int(sum(len(self.trajectories[i]) for i in self.train_ids)),
            "n_test_frames": int(sum(len(self.trajectories[i]) for i in self.test_ids)),
            "fps": self.fps,
        }


def save_dataset(ds: Dataset, path) -> None:
    first = ds.trajectories[0]
    _, c, h, w = first.images.shape
    a = first.actions.shape[1]
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(struct.pack("<IIII", c, h, w, a))
        f.write(struct.pack("<d", float(ds.fps)))
        f.write(struct.pack("<I", len(ds.trajectories)))
        train = set(ds.train_ids)
        for i, t in enumerate(ds.trajectories):
            f.write(struct.pack("<IBBBB", len(t), TAGS.index(t.tag),
                                DIRECTIONS.index(t.direction), 0 if i in train else 1, 0))
        for t in ds.trajectories:
            f.write(np.ascontiguousarray(t.images, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(t.actions, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != DATASET_MAGIC:
        raise ValueError("not a TBCD dataset file")
    version, = struct.unpack_from("<I", data, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported TBCD version {version}")
    c, h, w, a = struct.unpack_from("<IIII", data, 8)
    fps, = struct.unpack_from("<d", data, 24)
    n_traj, = struct.unpack_from("<I", data, 32)
    off = 36
    headers = []
    for _ in range(n_traj):
        length, tag_i, dir_i, split_i, _pad = struct.unpack_from("<IBBBB", data, off)
        headers.append((length, tag_i, dir_i, split_i))
        off += 8
    trajectories = []
    train_ids = []
    test_ids = []
    for i, (length, tag_i, dir_i, split_i) in enumerate(headers):
        img_count = length * c * h * w
        act_count = length * a
        need = (img_count + act_count) * 4
        if off + need > len(data):
            raise ValueError("truncated TBCD file")
        images = np.frombuffer(data, dtype="<f4", count=img_count, offset=off).reshape(length, c, h, w)
        off += img_count * 4
        actions = np.frombuffer(data, dtype="<f4", count=act_count, offset=off).reshape(length, a)
        off += act_count * 4
        trajectories.append(Trajectory(images.copy(), actions.copy(),
                                       TAGS[tag_i], DIRECTIONS[dir_i]))
        (train_ids if split_i == 0 else test_ids).append(i)
    if off != len(data):
        raise ValueError("trailing bytes in TBCD file")
    return Dataset(trajectories=trajectories, fps=fps,
                   train_ids=tuple(train_ids), test_ids=tuple(test_ids))
