"""Layer-wise path similarity: Spearman and L1 comparisons, anchoring, smoothing.

Undefined per-layer values (zero-variance activations, degenerate anchors)
are stored as NaN and excluded from every downstream statistic.
"""

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage, stats

from .errors import InputError, UndefinedCorrelationError
from .utils import atomic_write_text

METRICS = ("spearman", "l1")
ANCHOR_TOL = 1e-12


@dataclass
class NormalizationAnchors:
    same_class: np.ndarray
    diff_class: np.ndarray
    metric: str

    def __post_init__(self):
        self.same_class = np.asarray(self.same_class, dtype=np.float64)
        self.diff_class = np.asarray(self.diff_class, dtype=np.float64)
        if self.same_class.shape != self.diff_class.shape:
            raise InputError("anchor series must have equal length")
        if self.metric not in METRICS:
            raise InputError(f"unknown metric {self.metric!r}")

    @property
    def degenerate(self):
        """Layers whose anchors cannot define a scale."""
        gap = np.abs(self.same_class - self.diff_class)
        return ~(gap >= ANCHOR_TOL)


@dataclass
class SimilarityCurve:
    metric: str
    values: np.ndarray
    std: np.ndarray | None = None
    normalized: bool = False
    smoothed: bool = False
    layer_names: list = field(default_factory=list)
    anchors: NormalizationAnchors | None = None
    window_mean: int | None = None
    window_std: int | None = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InputError(f"unknown metric {self.metric!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.std is not None:
            self.std = np.asarray(self.std, dtype=np.float64)
        if not self.layer_names:
            self.layer_names = [str(i) for i in range(len(self.values))]

    def __len__(self):
        return len(self.values)

    @property
    def defined(self):
        return np.isfinite(self.values)

    def mean(self):
        """Mean over defined layers."""
        if not self.defined.any():
            return float("nan")
        return float(self.values[self.defined].mean())


def average_ranks(v):
    return stats.rankdata(v, method="average")


def spearman(v1, v2) -> float:
    """Pearson correlation of average (fractional) ranks."""
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError("spearman needs at least two values")
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    sa = np.dot(ra, ra)
    sb = np.dot(rb, rb)
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("spearman undefined for a constant vector")
    r = np.dot(ra, rb) / np.sqrt(sa * sb)
    return float(np.clip(r, -1.0, 1.0))


def l1_distance(v1, v2) -> float:
    """Sum of absolute differences."""
    a = np.asarray(v1, dtype=np.float64).ravel()
    b = np.asarray(v2, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.abs(a - b).sum())


def layer_metric(metric, v1, v2) -> float:
    if metric == "spearman":
        try:
            return spearman(v1, v2)
        except UndefinedCorrelationError:
            return float("nan")
    if metric == "l1":
        return l1_distance(v1, v2)
    raise InputError(f"unknown metric {metric!r}")


def path_similarity(a, b, metric, layer_names=None) -> SimilarityCurve:
    """Raw per-layer comparison of two activation records or profiles."""
    ea, eb = a.entries, b.entries
    if len(ea) != len(eb) or any(x.shape != y.shape for x, y in zip(ea, eb)):
        raise InputError("activation sets come from different models")
    values = [layer_metric(metric, x, y) for x, y in zip(ea, eb)]
    return SimilarityCurve(metric, np.array(values), layer_names=list(layer_names or []))


def average_curves(curves, with_std=True) -> SimilarityCurve:
    """Per-layer mean (and population std) of raw curves, NaN-aware."""
    if not curves:
        raise InputError("no curves to average")
    first = curves[0]
    stack = np.stack([c.values for c in curves])
    if any(c.metric != first.metric for c in curves) or stack.shape[1] != len(first):
        raise InputError("curves disagree on metric or length")
    counts = np.isfinite(stack).sum(0)
    with np.errstate(invalid="ignore"):
        total = np.where(np.isfinite(stack), stack, 0.0).sum(0)
        mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
        dev = np.where(np.isfinite(stack), (stack - mean) ** 2, 0.0).sum(0)
        std = np.where(counts > 0, np.sqrt(dev / np.maximum(counts, 1)), np.nan)
    return SimilarityCurve(first.metric, mean, std if with_std else None,
                           normalized=first.normalized, smoothed=first.smoothed,
                           layer_names=list(first.layer_names), anchors=first.anchors)


def normalize_curve(curve: SimilarityCurve, anchors: NormalizationAnchors) -> SimilarityCurve:
    """Map raw values onto the anchor scale.

    Spearman: same-class -> 1, different-class -> 0.
    L1: same-class -> 0, different-class -> 1.
    """
    if curve.metric != anchors.metric:
        raise InputError("curve and anchor metrics differ")
    if len(curve) != len(anchors.same_class):
        raise InputError("curve and anchors differ in length")
    same, diff = anchors.same_class, anchors.diff_class
    bad = anchors.degenerate
    with np.errstate(divide="ignore", invalid="ignore"):
        if curve.metric == "spearman":
            scale = same - diff
            values = (curve.values - diff) / scale
        else:
            scale = diff - same
            values = (curve.values - same) / scale
        std = None if curve.std is None else curve.std / np.abs(scale)
    values = np.where(bad, np.nan, values)
    if std is not None:
        std = np.where(bad, np.nan, std)
    return replace(curve, values=values, std=std, normalized=True, anchors=anchors)


def denormalize_curve(curve: SimilarityCurve) -> SimilarityCurve:
    """Inverse of :func:`normalize_curve` using the anchors it recorded."""
    if not curve.normalized or curve.anchors is None:
        raise InputError("curve carries no normalization anchors")
    same, diff = curve.anchors.same_class, curve.anchors.diff_class
    if curve.metric == "spearman":
        scale = same - diff
        values = curve.values * scale + diff
    else:
        scale = diff - same
        values = curve.values * scale + same
    std = None if curve.std is None else curve.std * np.abs(scale)
    return replace(curve, values=values, std=std, normalized=False, anchors=None)


def _moving_average(x, window):
    if window < 1:
        raise InputError("smoothing window must be >= 1")
    if window == 1 or x.size == 0:
        return x.copy()
    ok = np.isfinite(x)
    weights = np.full(window, 1.0 / window)
    if ok.all():
        return ndimage.convolve1d(x, weights, mode="nearest")
    num = ndimage.convolve1d(np.where(ok, x, 0.0), weights, mode="nearest")
    den = ndimage.convolve1d(ok.astype(np.float64), weights, mode="nearest")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, np.nan)


def smooth_curve(curve: SimilarityCurve, window_mean=10, window_std=5) -> SimilarityCurve:
    """Uniform moving average with nearest-edge replication at the ends."""
    values = _moving_average(curve.values, int(window_mean))
    std = None if curve.std is None else _moving_average(curve.std, int(window_std))
    return replace(curve, values=values, std=std, smoothed=True,
                   window_mean=int(window_mean), window_std=int(window_std))


_RELATIONS = {
    "le": np.less_equal,
    "lt": np.less,
    "ge": np.greater_equal,
    "gt": np.greater,
}


def layer_fraction_satisfying(curve_p, curve_ref, relation) -> float:
    """Fraction of layers (both sides defined) where ``p <relation> ref`` holds.

    ``relation`` is one of ``le``, ``lt``, ``ge``, ``gt`` (or the symbols
    ``<=``, ``<``, ``>=``, ``>``).
    """
    relation = {"<=": "le", "<": "lt", ">=": "ge", ">": "gt"}.get(relation, relation)
    if relation not in _RELATIONS:
        raise InputError(f"unknown relation {relation!r}")
    p = curve_p.values if isinstance(curve_p, SimilarityCurve) else np.asarray(curve_p, float)
    r = curve_ref.values if isinstance(curve_ref, SimilarityCurve) else np.asarray(curve_ref, float)
    if p.shape != r.shape:
        raise InputError("curves differ in length")
    ok = np.isfinite(p) & np.isfinite(r)
    if not ok.any():
        raise InputError("no defined layers to compare")
    return float(_RELATIONS[relation](p[ok], r[ok]).mean())


# ---------------------------------------------------------------------------
# CSV


def curve_to_csv(curve: SimilarityCurve, **extra) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    meta = {
        "metric": curve.metric,
        "normalized": int(curve.normalized),
        "smoothed": int(curve.smoothed),
        "window_mean": curve.window_mean if curve.window_mean is not None else "",
        "window_std": curve.window_std if curve.window_std is not None else "",
    }
    meta.update(extra)
    w.writerow(["#"] + [f"{k}={v}" for k, v in meta.items()])
    w.writerow(["layer_index", "layer_name", "value", "std", "defined"])
    std = curve.std if curve.std is not None else np.full(len(curve), np.nan)
    for i, (name, v, s) in enumerate(zip(curve.layer_names, curve.values, std)):
        w.writerow([i, name, repr(float(v)), repr(float(s)), int(np.isfinite(v))])
    return buf.getvalue()


def write_curve_csv(curve, path, **extra):
    atomic_write_text(path, curve_to_csv(curve, **extra))


def read_curve_csv(path):
    """Returns ``(curve, metadata)``; anchors are not stored in CSV."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    meta = dict(item.split("=", 1) for item in rows[0][1:])
    names, values, std = [], [], []
    for row in rows[2:]:
        names.append(row[1])
        values.append(float(row[2]))
        std.append(float(row[3]))
    std = np.array(std)
    curve = SimilarityCurve(
        meta["metric"], np.array(values),
        None if np.isnan(std).all() else std,
        normalized=meta.get("normalized") == "1",
        smoothed=meta.get("smoothed") == "1",
        layer_names=names,
        window_mean=int(meta["window_mean"]) if meta.get("window_mean") else None,
        window_std=int(meta["window_std"]) if meta.get("window_std") else None,
    )
    return curve, meta
