"""Synthetic JPEG corpora for tests, benchmarks and the evaluation harness.

Images are rendered with numpy and compressed by Pillow (libjpeg), which
also serves as the independent reference codec in the test-suite.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

DESK_SIZES = [(384, 256), (256, 256), (320, 240), (200, 136), (128, 96), (96, 64), (384, 200), (64, 64),
              (250, 170), (176, 144)]


def to_jpeg(rgb: np.ndarray, quality: int = 75, subsampling: int = 0) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.clip(rgb, 0, 255).astype(np.uint8)).save(
        buf, "JPEG", quality=quality, subsampling=subsampling)
    return buf.getvalue()


def _scene(w: int, h: int, rng: np.random.Generator) -> np.ndarray:
    """A natural-ish scene: smooth gradients, a few shapes, texture and noise."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    base = rng.uniform(40, 210, 3)
    grad = rng.uniform(-0.6, 0.6, (2, 3))
    img += base + x[..., None] * grad[0] + y[..., None] * grad[1]
    for _ in range(rng.integers(2, 6)):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = rng.uniform(0.08, 0.35) * min(w, h)
        mask = (x - cx) ** 2 + (y - cy) ** 2 < r * r
        img[mask] = rng.uniform(0, 255, 3)
    freq = rng.uniform(0.05, 0.6)
    theta = rng.uniform(0, np.pi)
    tex = np.sin(freq * (x * np.cos(theta) + y * np.sin(theta)))
    img += rng.uniform(5, 40) * tex[..., None]
    img += rng.normal(0, rng.uniform(2, 12), img.shape)
    return img


def desk_corpus(n: int = 20, seed: int = 0):
    """``n`` baseline JPEGs alternating 4:4:4 and 4:2:0; returns ``[(name, bytes)]``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        w, h = DESK_SIZES[i % len(DESK_SIZES)]
        sub = 0 if i % 2 == 0 else 2
        q = int(rng.integers(60, 95))
        out.append((f"desk{i:02d}_{w}x{h}_{'444' if sub == 0 else '420'}.jpg",
                    to_jpeg(_scene(w, h, rng), q, sub)))
    return out


def _category_params(cat: int, rng: np.random.Generator) -> dict:
    return {
        "color": rng.uniform(30, 225, 3),
        "accent": rng.uniform(0, 255, 3),
        "freq": rng.uniform(0.05, 1.2),
        "theta": rng.uniform(0, np.pi),
        "amp": rng.uniform(10, 70),
        "noise": rng.uniform(1, 20),
        "blobs": int(rng.integers(0, 6)),
        "checker": int(rng.integers(0, 3)),
    }


def _category_image(p: dict, w: int, h: int, rng: np.random.Generator) -> np.ndarray:
    """One member of a category.

    Members differ along two continuous latent factors (texture scale and
    accent strength), so that within-category similarity is graded rather
    than uniformly tied.
    """
    t1, t2 = rng.uniform(0, 1, 2)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.broadcast_to(p["color"] * (0.8 + 0.4 * t2), (h, w, 3)).copy()
    theta = p["theta"] + 0.5 * (t1 - 0.5)
    freq = p["freq"] * (0.6 + 0.8 * t1)
    phase = rng.uniform(0, 2 * np.pi)
    tex = np.sin(freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)
    img += p["amp"] * (0.5 + t2) * tex[..., None] * np.array([1.0, 0.6, 0.3])
    if p["checker"]:
        s = 4 * p["checker"]
        chk = ((x // s + y // s) % 2) * 2 - 1
        img += 20 * t1 * chk[..., None]
    for _ in range(p["blobs"]):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        r = (0.08 + 0.2 * t2) * min(w, h)
        mask = (x - cx) ** 2 + (y - cy) ** 2 < r * r
        img[mask] = p["accent"]
    img += rng.normal(0, p["noise"], img.shape)
    return img


def toy_corpus(categories: int = 10, per_category: int = 10, size=(96, 64), seed: int = 0,
               quality: int = 80, subsampling: int = 2):
    """Labeled corpus; returns ``[(category, name, bytes)]``."""
    rng = np.random.default_rng(seed)
    params = [_category_params(c, rng) for c in range(categories)]
    out = []
    for c in range(categories):
        for i in range(per_category):
            img = _category_image(params[c], size[0], size[1], rng)
            out.append((f"cat{c:02d}", f"cat{c:02d}_{i:02d}.jpg", to_jpeg(img, quality, subsampling)))
    return out


def write_desk_corpus(root, n: int = 20, seed: int = 0) -> list:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in desk_corpus(n, seed):
        p = root / name
        p.write_bytes(data)
        paths.append(p)
    return paths


def write_toy_corpus(root, categories: int = 10, per_category: int = 10, seed: int = 0) -> list:
    """Directory-per-category layout."""
    root = Path(root)
    paths = []
    for cat, name, data in toy_corpus(categories, per_category, seed=seed):
        d = root / cat
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_bytes(data)
        paths.append(d / name)
    return paths
