"""Offline toy dataset: random crops of scikit-image's bundled sample photographs.

Each class is one source photograph; an image is a random square crop
(random side, position and horizontal flip) resized to ``size`` pixels.
The crops keep natural-image intensity and texture statistics, which the
path-similarity comparisons rely on.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .profiles import ImageSetManifest

PATCH_SOURCES = (
    "astronaut", "brick", "camera", "chelsea", "coffee",
    "grass", "gravel", "hubble_deep_field", "immunohistochemistry", "rocket",
)


def _source_image(name) -> Image.Image:
    import skimage.data

    arr = getattr(skimage.data, name)()
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return Image.fromarray(arr[..., :3].astype(np.uint8), mode="RGB")


def make_patch_dataset(out_dir, per_class=150, size=32, seed=0, sources=PATCH_SOURCES) -> Path:
    """Write ``out_dir/<source>/<index>.png``; deterministic given ``seed``."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    for name in sources:
        src = _source_image(name)
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        w, h = src.size
        lo = max(size, min(w, h) // 8)
        hi = max(lo + 1, min(w, h) // 3)
        for i in range(per_class):
            side = int(rng.integers(lo, hi))
            x = int(rng.integers(0, w - side + 1))
            y = int(rng.integers(0, h - side + 1))
            crop = src.crop((x, y, x + side, y + side)).resize((size, size), Image.BILINEAR)
            if rng.random() < 0.5:
                crop = crop.transpose(Image.FLIP_LEFT_RIGHT)
            crop.save(d / f"{i:04d}.png")
    return out


def holdout_manifests(model, per_class=None) -> dict:
    """Per-class manifests over a trained toy model's held-out split."""
    by_class = {}
    for path, label in model.metadata["holdout"]:
        by_class.setdefault(int(label), []).append(path)
    out = {}
    for c, paths in sorted(by_class.items()):
        paths = paths[:per_class] if per_class else paths
        out[c] = ImageSetManifest(f"holdout-{c}", [(p, c) for p in paths], c,
                                  "toy-cnn held-out split")
    return out
