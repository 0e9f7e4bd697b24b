"""Natural-image activation profiles, normalization anchors and the activation cache."""

import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import IngestionError, InputError
from .images import decode_image
from .model_adapter import ActivationRecord, ModelHandle, forward_with_activations
from .pathsim import NormalizationAnchors, SimilarityCurve, average_curves, path_similarity
from .utils import atomic_write_bytes, derive_seed, read_json, write_json


@dataclass
class ImageSetManifest:
    set_id: str
    entries: list  # (path, label or None)
    class_id: int | None = None
    source: str = ""
    root: Path | None = None

    def __post_init__(self):
        if not self.entries:
            raise InputError(f"manifest {self.set_id!r} has no entries")
        self.entries = [(str(p), None if lab is None else int(lab)) for p, lab in self.entries]

    def resolve(self, path):
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    @property
    def paths(self):
        return [self.resolve(p) for p, _ in self.entries]

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = read_json(path)
        except (OSError, ValueError) as e:
            raise IngestionError(f"cannot read manifest {path}: {e}") from e
        entries = []
        for e in d["entries"]:
            if isinstance(e, str):
                entries.append((e, None))
            elif isinstance(e, dict):
                entries.append((e["path"], e.get("label")))
            else:
                entries.append((e[0], e[1] if len(e) > 1 else None))
        return cls(d["set_id"], entries, d.get("class_id"), d.get("source", ""), path.parent)

    def save(self, path):
        write_json(path, {
            "set_id": self.set_id,
            "class_id": self.class_id,
            "source": self.source,
            "entries": [{"path": p, "label": lab} for p, lab in self.entries],
        })


@dataclass
class ActivationProfile:
    class_id: int | None
    n_images: int
    entries: list
    model_hash: str = ""

    def save(self, path):
        path = Path(path)
        buf = io.BytesIO()
        np.savez(buf, *self.entries)
        atomic_write_bytes(path.with_suffix(".npz"), buf.getvalue())
        write_json(path.with_suffix(".json"), {
            "class_id": self.class_id, "n_images": self.n_images, "model_hash": self.model_hash,
        })

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = read_json(path.with_suffix(".json"))
        with np.load(path.with_suffix(".npz")) as z:
            entries = [z[f"arr_{i}"] for i in range(len(z.files))]
        return cls(meta["class_id"], meta["n_images"], entries, meta.get("model_hash", ""))


def load_images(manifest: ImageSetManifest, model: ModelHandle):
    """Decode every entry; returns ``(tensors, paths, failures)``."""
    images, paths, failures = [], [], []
    for p in manifest.paths:
        try:
            images.append(decode_image(p, model.input_shape))
            paths.append(p)
        except (OSError, ValueError) as e:
            failures.append((str(p), f"{type(e).__name__}: {e}"))
    return images, paths, failures


def load_image_set(manifest: ImageSetManifest, model: ModelHandle):
    images, _, failures = load_images(manifest, model)
    if failures:
        raise IngestionError(
            f"{len(failures)}/{len(manifest.entries)} images in {manifest.set_id!r} failed to decode",
            failures)
    return images


# ---------------------------------------------------------------------------
# activation cache


class ActivationCache:
    """Content-addressed on-disk store of activation records.

    Keyed by model arch + weight hash and the image's float32 bytes.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def key(self, model: ModelHandle, image: torch.Tensor):
        h = hashlib.sha256()
        h.update(f"{model.arch_id}:{model.weight_hash}:".encode())
        h.update(image.detach().to(torch.float32).contiguous().numpy().tobytes())
        return h.hexdigest()

    def path(self, key):
        return self.root / key[:2] / f"{key}.npz"

    def get(self, model, image):
        p = self.path(self.key(model, image))
        if not p.exists():
            self.misses += 1
            return None
        try:
            with np.load(p) as z:
                entries = [z[f"arr_{i}"] for i in range(len(z.files) - 1)]
                logits = z["logits"]
        except (OSError, ValueError, KeyError):
            self.misses += 1
            return None
        self.hits += 1
        return logits, ActivationRecord(entries)

    def put(self, model, image, logits, record):
        buf = io.BytesIO()
        np.savez(buf, *record.entries, logits=logits)
        atomic_write_bytes(self.path(self.key(model, image)), buf.getvalue())


def record_for(model, image, cache: ActivationCache | None = None):
    if cache is not None:
        hit = cache.get(model, image)
        if hit is not None:
            return hit[1]
    logits, record = forward_with_activations(model, image)
    if cache is not None:
        cache.put(model, image, logits, record)
    return record


def iter_records(model, images, cache=None, workers=1):
    """Activation records in input order; forward passes may run on a thread pool."""
    if workers <= 1:
        for im in images:
            yield record_for(model, im, cache)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda im: record_for(model, im, cache), images)


# ---------------------------------------------------------------------------
# profiles and curves


def mean_profile(model: ModelHandle, images, class_id=None, cache=None, workers=1) -> ActivationProfile:
    """Per-layer arithmetic mean of activation records (float64 accumulation)."""
    images = list(images)
    if not images:
        raise InputError("mean_profile needs at least one image")
    sums = None
    for rec in iter_records(model, images, cache, workers):
        if sums is None:
            sums = [e.astype(np.float64) for e in rec.entries]
        else:
            for s, e in zip(sums, rec.entries):
                s += e
    n = len(images)
    return ActivationProfile(class_id, n, [(s / n).astype(np.float32) for s in sums],
                             model.weight_hash)


def _check_provenance(model, profile):
    if profile.model_hash and profile.model_hash != model.weight_hash:
        raise InputError("profile was computed with a different model")
    if len(profile.entries) != len(model.layers):
        raise InputError("profile layer count does not match the model")


def image_curves(model, images, profile, metric, cache=None, workers=1):
    """One raw curve per image against ``profile``."""
    _check_provenance(model, profile)
    names = [l.name for l in model.layers]
    return [path_similarity(profile, rec, metric, names)
            for rec in iter_records(model, images, cache, workers)]


def compare_to_profile(model, subject, profile, metric, cache=None, workers=1) -> SimilarityCurve:
    """Raw curve for a single image, or the mean curve with per-layer std for a list."""
    single = isinstance(subject, torch.Tensor) and subject.dim() == 3
    if single:
        return image_curves(model, [subject], profile, metric, cache)[0]
    return average_curves(image_curves(model, list(subject), profile, metric, cache, workers))


def diff_class_pool(class_images: dict, class_id, seed, count=None):
    """Images sampled uniformly (without replacement) from all other classes."""
    pool = [im for k in sorted(class_images) if k != class_id for im in class_images[k]]
    count = len(class_images[class_id]) if count is None else count
    if not pool:
        raise InputError("different-class pool is empty")
    rng = np.random.default_rng(derive_seed(seed, f"diff-pool-{class_id}"))
    idx = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
    return [pool[i] for i in sorted(idx)]


@dataclass
class ClassComparison:
    """Same- and different-class image curves for one class profile."""

    class_id: int
    profile: ActivationProfile
    same: SimilarityCurve
    diff: SimilarityCurve
    same_per_image: list = field(default_factory=list)
    diff_per_image: list = field(default_factory=list)


def _as_images(model, value):
    if isinstance(value, ImageSetManifest):
        return load_image_set(value, model)
    return list(value)


def class_comparisons(model, class_sets: dict, metric, seed=0, cache=None, workers=1,
                      profiles=None):
    """Per-class profiles plus same/diff image curves.

    ``class_sets`` maps class id to a manifest or an image list.
    """
    if len(class_sets) < 2:
        raise InputError("anchors need at least two classes")
    images = {k: _as_images(model, v) for k, v in sorted(class_sets.items())}
    for k, ims in images.items():
        if not ims:
            raise InputError(f"class {k} has no images")
    out = {}
    for k, ims in images.items():
        prof = (profiles or {}).get(k) or mean_profile(model, ims, k, cache, workers)
        same_curves = image_curves(model, ims, prof, metric, cache, workers)
        diff_curves = image_curves(model, diff_class_pool(images, k, seed), prof, metric,
                                   cache, workers)
        out[k] = ClassComparison(k, prof, average_curves(same_curves), average_curves(diff_curves),
                                 same_curves, diff_curves)
    return out


def anchors_from_comparisons(comparisons: dict, metric) -> NormalizationAnchors:
    same = average_curves([c.same for c in comparisons.values()]).values
    diff = average_curves([c.diff for c in comparisons.values()]).values
    return NormalizationAnchors(same, diff, metric)


def compute_anchors(model, class_sets: dict, metric, seed=0, cache=None, workers=1):
    """Class-averaged same-class and different-class curves against each class profile."""
    return anchors_from_comparisons(
        class_comparisons(model, class_sets, metric, seed, cache, workers), metric)
