"""Deterministic synthetic 32x32 corpora and image I/O.

Two disjoint families: "content" images are high-contrast geometric
layouts (strong contours), "style" images are low-contrast textures and
palettes (edge-light by construction).  Every image is a pure function of
(spec.seed, family, index).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .numerics import SeededRng

CONTENT_KINDS = ["circle", "square", "triangle", "stripes"]
STYLE_KINDS = ["checkerboard", "hatch", "grain", "wash"]


@dataclass
class DatasetSpec:
    count: int              # images per family
    seed: int = 0
    resolution: int = 32

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError(f"count must be positive, got {self.count}")
        if self.resolution != 32:
            raise ValueError("only 32x32 supported")


def load_image(path) -> np.ndarray:
    """PNG -> (3, h, w) float64 in [-1, 1]."""
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{path}: expected 3-channel image")
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def save_image(path, tensor: np.ndarray) -> None:
    """(3, h, w) in [-1, 1] -> 8-bit PNG, round half away from zero."""
    arr = (np.asarray(tensor) + 1.0) * 127.5
    arr = np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def _coords(res):
    y, x = np.mgrid[0:res, 0:res]
    return y + 0.5, x + 0.5


def _two_colors(rng, min_sep=1.0):
    # channelwise colors in [-1, 1] with a guaranteed mean separation
    while True:
        a = rng.uniform((3,)) * 2 - 1
        b = rng.uniform((3,)) * 2 - 1
        if np.abs(a - b).mean() >= min_sep:
            return a, b


def _fill(mask, fg, bg):
    return np.where(mask[None], fg[:, None, None], bg[:, None, None])


def make_content_image(kind: str, rng: SeededRng, res=32) -> np.ndarray:
    y, x = _coords(res)
    fg, bg = _two_colors(rng, min_sep=1.0)
    if kind == "circle":
        cy, cx = rng.uniform((2,)) * res * 0.5 + res * 0.25
        r = rng.uniform(()) * res * 0.2 + res * 0.15
        mask = (y - cy) ** 2 + (x - cx) ** 2 <= r ** 2
    elif kind == "square":
        cy, cx = rng.uniform((2,)) * res * 0.5 + res * 0.25
        half = rng.uniform(()) * res * 0.18 + res * 0.12
        mask = (np.abs(y - cy) <= half) & (np.abs(x - cx) <= half)
    elif kind == "triangle":
        cy, cx = rng.uniform((2,)) * res * 0.4 + res * 0.3
        h = rng.uniform(()) * res * 0.25 + res * 0.2
        mask = (y >= cy - h / 2) & (y <= cy + h / 2) & (np.abs(x - cx) <= (y - (cy - h / 2)) / 2)
    elif kind == "stripes":
        width = int(rng.integers(4, 9))
        axis = y if rng.uniform(()) < 0.5 else x
        mask = (axis // width).astype(int) % 2 == 0
    else:
        raise ValueError(f"unknown content kind {kind!r}")
    return np.clip(_fill(mask, fg, bg), -1, 1)


def make_style_image(kind: str, rng: SeededRng, res=32) -> np.ndarray:
    y, x = _coords(res)
    a, b = _two_colors(rng, min_sep=0.5)
    mid = (a + b) / 2
    amp = (b - a) / 2 * 0.4  # low contrast keeps edge energy below the content family
    if kind == "checkerboard":
        cell = int(rng.integers(4, 9))
        pat = ((y // cell).astype(int) + (x // cell).astype(int)) % 2 * 2.0 - 1.0
        img = mid[:, None, None] + amp[:, None, None] * pat
        img = gaussian_filter(img, sigma=(0, 0.8, 0.8))
    elif kind == "hatch":
        spacing = int(rng.integers(3, 7))
        pat = np.sin(2 * np.pi * (x + y) / spacing)
        img = mid[:, None, None] + amp[:, None, None] * pat
        img = gaussian_filter(img, sigma=(0, 0.9, 0.9))
    elif kind == "grain":
        noise = rng.normal((3, res, res)) * 0.15
        img = mid[:, None, None] + gaussian_filter(noise, sigma=(0, 0.7, 0.7))
    elif kind == "wash":
        angle = rng.uniform(()) * 2 * np.pi
        ramp = (np.cos(angle) * x + np.sin(angle) * y) / res
        ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-12)
        img = a[:, None, None] + (b - a)[:, None, None] * ramp
    else:
        raise ValueError(f"unknown style kind {kind!r}")
    return np.clip(img, -1, 1)


def generate(spec: DatasetSpec, out_dir) -> dict:
    """Write PNGs plus a manifest that fully reconstructs every image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = SeededRng(spec.seed)
    entries = []
    for family, kinds in (("content", CONTENT_KINDS), ("style", STYLE_KINDS)):
        fam_offset = 0 if family == "content" else 1_000_000
        for i in range(spec.count):
            rng = root.spawn(fam_offset + i)
            kind = kinds[i % len(kinds)]
            img = (make_content_image if family == "content" else make_style_image)(kind, rng, spec.resolution)
            name = f"{family}_{i:05d}.png"
            save_image(out_dir / name, img)
            entries.append({"file": name, "family": family, "kind": kind, "index": i})
    manifest = {"seed": spec.seed, "count": spec.count, "resolution": spec.resolution,
                "images": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_dataset(data_dir, family=None) -> np.ndarray:
    """Stack every manifest image (optionally one family) into (n, 3, h, w)."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    imgs = [load_image(data_dir / e["file"]) for e in manifest["images"]
            if family is None or e["family"] == family]
    return np.stack(imgs)
