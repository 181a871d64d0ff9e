"""Procedural stand-in dataset: stick figures with textured torsos.

Each person gets stable limb/torso colors and a periodic torso texture
(stripes or checker with person-specific frequency, angle and phase); each
pose re-poses the 18-joint skeleton deterministically. Output follows the
directory layout documented in :mod:`ratenet.data` and is byte-identical
for identical arguments.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import os

import numpy as np
from PIL import Image, ImageDraw

from .data import N_JOINTS, DatasetError, check_size

# Bones drawn as thick segments, by joint index.
_BONES = (
    (1, 0),            # neck - nose
    (1, 2), (1, 5),    # neck - shoulders
    (2, 3), (3, 4),    # right arm
    (5, 6), (6, 7),    # left arm
    (1, 8), (1, 11),   # neck - hips
    (8, 9), (9, 10),   # right leg
    (11, 12), (12, 13),  # left leg
)

# Saturated background: normalizes to exactly +1.0, the edge of the legal
# range, so flat regions stay a nontrivial target for a bounded output head.
_BACKGROUND = (255, 255, 255)


def _person_rng(seed: int, person: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, person]))

def _pose_rng(seed: int, person: int, pose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, person, pose]))


def _hsv_bytes(h, s, v):
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return int(r * 255), int(g * 255), int(b * 255)


def person_style(seed: int, person: int) -> dict:
    """Stable per-person appearance: colors plus torso texture parameters."""
    rng = _person_rng(seed, person)
    hue = rng.uniform()
    style = {
        "torso_color": _hsv_bytes(hue, rng.uniform(0.55, 0.95), rng.uniform(0.55, 0.9)),
        "accent_color": _hsv_bytes(hue + rng.uniform(0.25, 0.6), 0.85, 0.9),
        "limb_color": _hsv_bytes(hue + rng.uniform(0.08, 0.2), 0.6, rng.uniform(0.3, 0.6)),
        "head_color": _hsv_bytes(0.08, rng.uniform(0.25, 0.45), rng.uniform(0.75, 0.95)),
        "texture": "stripes" if rng.uniform() < 0.5 else "checker",
        "frequency": float(rng.uniform(3.0, 8.0)),
        "angle": float(rng.uniform(0.0, np.pi)),
        "phase": float(rng.uniform(0.0, 2.0 * np.pi)),
    }
    return style


def skeleton_for(seed: int, person: int, pose: int, height: int, width: int):
    """Joint table for one rendered figure: ((18, 2) int pixel coords, (18,) bool).

    This is the ground truth the generator draws from; keypoint files on disk
    must round-trip back to exactly these values.
    """
    rng = _pose_rng(seed, person, pose)
    dx = rng.uniform(-0.03, 0.03)
    dy = rng.uniform(-0.02, 0.02)

    pts = np.zeros((N_JOINTS, 2), dtype=np.float64)
    pts[0] = (0.50, 0.13)            # nose
    pts[1] = (0.50, 0.25)            # neck
    pts[2] = (0.40, 0.27)            # r_shoulder
    pts[5] = (0.60, 0.27)            # l_shoulder
    pts[8] = (0.44, 0.55)            # r_hip
    pts[11] = (0.56, 0.55)           # l_hip
    pts[14] = (0.46, 0.11)           # r_eye
    pts[15] = (0.54, 0.11)           # l_eye
    pts[16] = (0.42, 0.14)           # r_ear
    pts[17] = (0.58, 0.14)           # l_ear

    def swing(base_idx, out_idx, length, angle, side):
        pts[out_idx, 0] = pts[base_idx, 0] + side * length * np.sin(angle)
        pts[out_idx, 1] = pts[base_idx, 1] + length * np.cos(angle)

    for side, sho, elb, wri in ((-1, 2, 3, 4), (+1, 5, 6, 7)):
        swing(sho, elb, 0.14, rng.uniform(0.05, 1.1), side)
        swing(elb, wri, 0.13, rng.uniform(-0.4, 1.3), side)
    for side, hip, kne, ank in ((-1, 8, 9, 10), (+1, 11, 12, 13)):
        swing(hip, kne, 0.16, rng.uniform(-0.15, 0.4), side)
        swing(kne, ank, 0.17, rng.uniform(-0.1, 0.3), side)

    pts[:, 0] = (pts[:, 0] + dx) * (width - 1)
    pts[:, 1] = (pts[:, 1] + dy) * (height - 1)
    coords = np.rint(pts).astype(np.int64)
    coords[:, 0] = np.clip(coords[:, 0], 1, width - 2)
    coords[:, 1] = np.clip(coords[:, 1], 1, height - 2)

    visible = np.ones(N_JOINTS, dtype=bool)
    # Ears occasionally drop out, so real runs exercise zero heatmap channels.
    for ear in (16, 17):
        if rng.uniform() < 0.15:
            visible[ear] = False
            coords[ear] = (-1, -1)
    return coords, visible


def _texture_field(style: dict, height: int, width: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    f = style["frequency"]
    if style["texture"] == "stripes":
        u = xs * np.cos(style["angle"]) + ys * np.sin(style["angle"])
        return np.sin(2.0 * np.pi * f * u / width + style["phase"]) > 0.0
    cell = max(2, int(round(width / (2.0 * f))))
    shift = int(style["phase"] / (2.0 * np.pi) * cell)
    return ((xs.astype(np.int64) + shift) // cell + ys.astype(np.int64) // cell) % 2 == 0


def render_figure(style: dict, coords: np.ndarray, visible: np.ndarray,
                  height: int, width: int) -> np.ndarray:
    """Draw one figure as an HxWx3 uint8 array."""
    img = Image.new("RGB", (width, height), _BACKGROUND)
    draw = ImageDraw.Draw(img)
    stroke = max(2, width // 24)

    def xy(j):
        return int(coords[j, 0]), int(coords[j, 1])

    for a, b in _BONES:
        if visible[a] and visible[b]:
            draw.line([xy(a), xy(b)], fill=style["limb_color"], width=stroke)

    torso = [xy(2), xy(5), xy(11), xy(8)]
    draw.polygon(torso, fill=style["torso_color"])

    mask_img = Image.new("L", (width, height), 0)
    ImageDraw.Draw(mask_img).polygon(torso, fill=255)
    mask = np.asarray(mask_img) > 0

    arr = np.asarray(img, dtype=np.uint8).copy()
    tex = _texture_field(style, height, width)
    arr[mask & tex] = style["accent_color"]

    img = Image.fromarray(arr)
    draw = ImageDraw.Draw(img)
    head_r = max(3, int(0.075 * height))
    hx, hy = xy(0)
    draw.ellipse([hx - head_r, hy - head_r, hx + head_r, hy + head_r],
                 fill=style["head_color"])
    return np.asarray(img, dtype=np.uint8)


def _write_json(path: str, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def make_synthetic_dataset(out_dir: str, n_persons: int, poses_per_person: int,
                           height: int, width: int, seed: int) -> str:
    """Write a complete procedural dataset under ``out_dir`` and return it.

    All persons land in the train split. Identical arguments produce
    byte-identical files.
    """
    if n_persons < 1:
        raise DatasetError("n_persons must be >= 1")
    if poses_per_person < 2:
        raise DatasetError("poses_per_person must be >= 2")
    check_size(height, width)

    img_dir = os.path.join(out_dir, "images")
    kp_dir = os.path.join(out_dir, "keypoints")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(kp_dir, exist_ok=True)

    splits = {}
    for p in range(n_persons):
        pid = f"p{p:03d}"
        splits[pid] = "train"
        style = person_style(seed, p)
        for q in range(poses_per_person):
            coords, vis = skeleton_for(seed, p, q, height, width)
            arr = render_figure(style, coords, vis, height, width)
            stem = f"{pid}_{q:02d}"
            Image.fromarray(arr).save(os.path.join(img_dir, stem + ".png"))
            _write_json(os.path.join(kp_dir, stem + ".json"), {
                "points": [[int(x), int(y)] for x, y in coords],
                "visible": [bool(v) for v in vis],
            })
    _write_json(os.path.join(out_dir, "splits.json"), splits)
    return out_dir


def dataset_digest(root: str) -> str:
    """SHA-256 over every file path and its bytes, in sorted order."""
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            h.update(os.path.relpath(full, root).encode())
            with open(full, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()
