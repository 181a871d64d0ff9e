"""Paired person-image dataset handling: keypoints, pose heatmaps, batching.

Directory layout expected by :func:`load_dataset`::

    root/
      images/<person_id>_<pose_id>.png      8-bit RGB
      keypoints/<person_id>_<pose_id>.json  {"points": [[x, y] * 18], "visible": [bool * 18]}
      splits.json                           {"<person_id>": "train" | "test", ...}

Joint order is the 18-point OpenPose skeleton (see ``JOINT_NAMES``).
Invisible joints carry sentinel coordinates (-1, -1) and a False flag.
Images are exchanged as float tensors of shape (3, H, W) in [-1, 1];
heatmaps as (18, H, W) in [0, 1]. H and W must be multiples of 8.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

JOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
N_JOINTS = 18

# Heatmap render width: 6 px at 256x256, scaled proportionally.
BASE_SIGMA = 6.0
BASE_RESOLUTION = 256


class DatasetError(ValueError):
    """Raised for malformed dataset directories, keypoint files or splits."""


def default_sigma(height: int) -> float:
    return BASE_SIGMA * height / BASE_RESOLUTION


def check_size(height: int, width: int) -> None:
    if height <= 0 or width <= 0 or height % 8 or width % 8:
        raise DatasetError(
            f"image size must be positive multiples of 8, got {height}x{width}"
        )


@dataclass(frozen=True)
class Keypoints18:
    """18 joint coordinates in pixel units, (x, y), plus visibility flags."""

    points: np.ndarray   # (18, 2) float32
    visible: np.ndarray  # (18,) bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        vis = np.asarray(self.visible, dtype=bool)
        if pts.shape != (N_JOINTS, 2) or vis.shape != (N_JOINTS,):
            raise DatasetError(
                f"expected {N_JOINTS} keypoints, got points {pts.shape} / visible {vis.shape}"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)


def render_heatmap(kp: Keypoints18, height: int, width: int, sigma: float) -> torch.Tensor:
    """Render one Gaussian bump per visible joint into an (18, H, W) tensor.

    Channel j holds exp(-||p - kp_j||^2 / (2 sigma^2)); invisible joints give an
    all-zero channel. A visible joint outside [0, W) x [0, H) is rejected.
    """
    if height <= 0 or width <= 0:
        raise DatasetError(f"non-positive heatmap size {height}x{width}")
    if sigma <= 0:
        raise DatasetError(f"sigma must be positive, got {sigma}")

    ys = np.arange(height, dtype=np.float32)[:, None]
    xs = np.arange(width, dtype=np.float32)[None, :]
    out = np.zeros((N_JOINTS, height, width), dtype=np.float32)
    for j in range(N_JOINTS):
        if not kp.visible[j]:
            continue
        x, y = kp.points[j]
        if not (0 <= x < width and 0 <= y < height):
            raise DatasetError(
                f"visible keypoint {j} ({JOINT_NAMES[j]}) at ({x}, {y}) outside {width}x{height}"
            )
        d2 = (xs - x) ** 2 + (ys - y) ** 2
        out[j] = np.exp(-d2 / (2.0 * sigma * sigma))
    return torch.from_numpy(out)


def normalize_image(raw: np.ndarray) -> torch.Tensor:
    """Map an 8-bit HxWx3 RGB array linearly onto a (3, H, W) tensor in [-1, 1]."""
    arr = np.asarray(raw)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DatasetError(f"expected HxWx3 RGB image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise DatasetError(f"expected 8-bit image, got dtype {arr.dtype}")
    t = torch.from_numpy(arr.astype(np.float32)).permute(2, 0, 1)
    return t * (2.0 / 255.0) - 1.0


def denormalize_image(t: torch.Tensor) -> np.ndarray:
    """Invert :func:`normalize_image`; values are clamped into [0, 255]."""
    if t.dim() != 3 or t.shape[0] != 3:
        raise DatasetError(f"expected (3, H, W) tensor, got {tuple(t.shape)}")
    arr = (t.detach().clamp(-1.0, 1.0) + 1.0) * (255.0 / 2.0)
    arr = arr.round().clamp(0, 255).to(torch.uint8)
    return arr.permute(1, 2, 0).numpy()


@dataclass(frozen=True)
class TrainingPair:
    """Source/target view of one person, with rendered pose heatmaps."""

    source_image: torch.Tensor  # (3, H, W)
    source_pose: torch.Tensor   # (18, H, W)
    target_image: torch.Tensor  # (3, H, W)
    target_pose: torch.Tensor   # (18, H, W)
    person_id: str

    def __post_init__(self):
        hw = self.source_image.shape[-2:]
        for t in (self.source_pose, self.target_image, self.target_pose):
            if t.shape[-2:] != hw:
                raise DatasetError("all pair tensors must share H, W")


@dataclass(frozen=True)
class PairEntry:
    person_id: str
    source_image: str
    target_image: str
    source_keypoints: str
    target_keypoints: str


@dataclass(frozen=True)
class DatasetIndex:
    root: str
    split: str
    pairs: tuple[PairEntry, ...]

    def __len__(self) -> int:
        return len(self.pairs)


def load_keypoints(path: str) -> Keypoints18:
    """Parse one keypoint JSON file. Parse errors carry the offending line."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict) or "points" not in doc or "visible" not in doc:
        raise DatasetError(f"{path}: expected object with 'points' and 'visible'")
    try:
        kp = Keypoints18(np.asarray(doc["points"], dtype=np.float32),
                         np.asarray(doc["visible"], dtype=bool))
    except (DatasetError, ValueError) as e:
        raise DatasetError(f"{path}: {e}") from e
    for j in range(N_JOINTS):
        if not kp.visible[j] and tuple(kp.points[j]) != (-1.0, -1.0):
            raise DatasetError(f"{path}: invisible joint {j} must use sentinel (-1, -1)")
    return kp


def _load_splits(root: str) -> dict[str, str]:
    path = os.path.join(root, "splits.json")
    if not os.path.isfile(path):
        raise DatasetError(f"missing split manifest {path}")

    # Duplicate person keys in the manifest would silently collapse under a
    # plain json.loads; detect them so train/test disjointness stays checkable.
    def reject_duplicates(items):
        seen = {}
        for key, value in items:
            if key in seen and seen[key] != value:
                raise DatasetError(
                    f"{path}: person '{key}' assigned to both '{seen[key]}' and '{value}'"
                )
            seen[key] = value
        return seen

    with open(path, "r", encoding="utf-8") as fh:
        try:
            splits = json.load(fh, object_pairs_hook=reject_duplicates)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(splits, dict):
        raise DatasetError(f"{path}: expected a person -> split object")
    for pid, sp in splits.items():
        if sp not in ("train", "test"):
            raise DatasetError(f"{path}: person '{pid}' has unknown split '{sp}'")
    return splits


def load_dataset(root: str, split: str) -> DatasetIndex:
    """Index all ordered (source, target) pose pairs of the requested split.

    Every person contributes n*(n-1) directed pairs over its n poses; pairs
    are ordered deterministically by path. Persons must be assigned to
    exactly one split and every image needs a keypoint file.
    """
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split '{split}'")
    img_dir = os.path.join(root, "images")
    kp_dir = os.path.join(root, "keypoints")
    splits = _load_splits(root)

    by_person: dict[str, list[tuple[str, str]]] = {}
    names = sorted(os.listdir(img_dir)) if os.path.isdir(img_dir) else []
    for name in names:
        if not name.endswith(".png"):
            continue
        stem = name[: -len(".png")]
        if "_" not in stem:
            raise DatasetError(f"image '{name}' does not match <person_id>_<pose_id>.png")
        pid = stem.rsplit("_", 1)[0]
        if pid not in splits:
            raise DatasetError(f"person '{pid}' (image {name}) missing from splits.json")
        kp_path = os.path.join(kp_dir, stem + ".json")
        if not os.path.isfile(kp_path):
            raise DatasetError(f"missing keypoint file for image {name}")
        by_person.setdefault(pid, []).append((os.path.join(img_dir, name), kp_path))

    pairs = []
    for pid in sorted(by_person):
        if splits[pid] != split:
            continue
        poses = sorted(by_person[pid])
        for src_img, src_kp in poses:
            for tgt_img, tgt_kp in poses:
                if src_img == tgt_img:
                    continue
                pairs.append(PairEntry(pid, src_img, tgt_img, src_kp, tgt_kp))
    return DatasetIndex(root=root, split=split, pairs=tuple(pairs))


def load_image(path: str) -> torch.Tensor:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return normalize_image(arr)


def load_pair(entry: PairEntry, sigma: float | None = None) -> TrainingPair:
    src = load_image(entry.source_image)
    tgt = load_image(entry.target_image)
    h, w = src.shape[-2:]
    check_size(h, w)
    if tgt.shape != src.shape:
        raise DatasetError(
            f"pair images disagree on size: {entry.source_image} vs {entry.target_image}"
        )
    s = default_sigma(h) if sigma is None else sigma
    src_kp = load_keypoints(entry.source_keypoints)
    tgt_kp = load_keypoints(entry.target_keypoints)
    return TrainingPair(
        source_image=src,
        source_pose=render_heatmap(src_kp, h, w, s),
        target_image=tgt,
        target_pose=render_heatmap(tgt_kp, h, w, s),
        person_id=entry.person_id,
    )


@dataclass(frozen=True)
class Batch:
    """Stacked training pairs: images (B, 3, H, W), heatmaps (B, 18, H, W)."""

    source_image: torch.Tensor
    source_pose: torch.Tensor
    target_image: torch.Tensor
    target_pose: torch.Tensor
    person_ids: tuple[str, ...]

    def __len__(self) -> int:
        return self.source_image.shape[0]


def collate(pairs: list[TrainingPair]) -> Batch:
    if not pairs:
        raise DatasetError("cannot collate an empty batch")
    return Batch(
        source_image=torch.stack([p.source_image for p in pairs]),
        source_pose=torch.stack([p.source_pose for p in pairs]),
        target_image=torch.stack([p.target_image for p in pairs]),
        target_pose=torch.stack([p.target_pose for p in pairs]),
        person_ids=tuple(p.person_id for p in pairs),
    )


class BatchSampler:
    """Serves batches whose composition is a pure function of (seed, cycle).

    Pairs are cached in memory after first load, which keeps repeated
    desk-scale cycles over a handful of pairs cheap.
    """

    def __init__(self, index: DatasetIndex, batch_size: int, seed: int,
                 sigma: float | None = None):
        if batch_size < 1:
            raise DatasetError("batch_size must be >= 1")
        if len(index) == 0:
            raise DatasetError(f"dataset index for split '{index.split}' is empty")
        self.index = index
        self.batch_size = batch_size
        self.seed = seed
        self.sigma = sigma
        self._cache: dict[int, TrainingPair] = {}

    def _pair(self, i: int) -> TrainingPair:
        if i not in self._cache:
            self._cache[i] = load_pair(self.index.pairs[i], self.sigma)
        return self._cache[i]

    def sample(self, cycle: int) -> Batch:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, cycle]))
        n = len(self.index)
        replace = self.batch_size > n
        picks = rng.choice(n, size=self.batch_size, replace=replace)
        return collate([self._pair(int(i)) for i in picks])
