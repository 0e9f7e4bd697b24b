"""Grid search over affine regularization, scored by raw Spearman path similarity."""

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InputError
from .pathsim import SimilarityCurve
from .profiles import compare_to_profile
from .proto_optimizer import AffineConfig, OptimConfig, generate_prototype
from .utils import atomic_write_text, config_hash, read_json, to_jsonable, write_json

log = logging.getLogger(__name__)

FULL_AXES = {
    "scale": [None, (0.9, 1.1), (0.8, 1.2), (0.7, 1.3), (0.5, 1.5)],
    "rotation": [None, 30, 60, 90, 180],
    "translate": [None, (0.05, 0.05), (0.1, 0.1), (0.2, 0.2), (0.5, 0.5)],
}

REDUCED_AXES = {
    "scale": [None, (0.9, 1.1), (0.7, 1.3)],
    "rotation": [None, 30, 180],
    "translate": [None, (0.1, 0.1), (0.5, 0.5)],
}


def build_grid(axes) -> list:
    """Cartesian product ordered lexicographically by (scale, rotation, translate)."""
    try:
        scales, rots, trans = axes["scale"], axes["rotation"], axes["translate"]
    except KeyError as e:
        raise InputError(f"missing axis {e}") from e
    for name, values in (("scale", scales), ("rotation", rots), ("translate", trans)):
        if len(values) == 0:
            raise InputError(f"axis {name!r} is empty")
    return [AffineConfig(s, r, t) for s, r, t in itertools.product(scales, rots, trans)]


@dataclass
class SweepRow:
    config: AffineConfig
    average_similarity: float
    error: str | None = None


@dataclass
class SweepResult:
    rows: list
    ranking: list

    def top(self, k=5):
        return [self.rows[i] for i in self.ranking[:k]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale_low", "scale_high", "rotation", "translate_x", "translate_y",
                    "avg_similarity"])
        for row in self.rows:
            c = row.config
            s = c.scale_range or ("", "")
            t = c.translate_frac or ("", "")
            rot = "" if c.rotation_max_deg is None else c.rotation_max_deg
            w.writerow([*s, rot, *t, repr(row.average_similarity)])
        return buf.getvalue()

    def ranking_json(self) -> str:
        return json.dumps({
            "ranking": self.ranking,
            "rows": [{"config": to_jsonable(r.config), "avg_similarity": r.average_similarity,
                      "error": r.error} for r in self.rows],
        }, indent=2, sort_keys=True)

    def top_table(self, k=5) -> str:
        lines = ["| Scale | Rotation | Translate | Average path similarity |",
                 "|---|---|---|---|"]
        for row in self.top(k):
            s, r, t = row.config.label()
            lines.append(f"| {s} | {r} | {t} | {row.average_similarity:.3f} |")
        return "\n".join(lines)

    def save(self, out_dir):
        out = Path(out_dir)
        atomic_write_text(out / "sweep.csv", self.to_csv())
        atomic_write_text(out / "sweep_ranking.json", self.ranking_json() + "\n")


def rank_rows(scores) -> list:
    """Descending by score, NaN last, ties in grid order."""
    scores = np.asarray(scores, dtype=np.float64)
    key = np.where(np.isnan(scores), np.inf, -scores)
    return [int(i) for i in np.argsort(key, kind="stable")]


def evaluate_config(model, class_id, cfg: AffineConfig, profile, base: OptimConfig | None = None,
                    return_curve=False):
    """Mean raw Spearman similarity over defined layers for one generated prototype."""
    base = base or OptimConfig()
    proto = generate_prototype(model, class_id, replace(base, affine=cfg))
    curve: SimilarityCurve = compare_to_profile(model, proto.image, profile, "spearman")
    score = curve.mean()
    return (score, curve) if return_curve else score


def _row_key(model, class_id, cfg, base):
    return config_hash({"model": model.weight_hash, "class": class_id, "affine": cfg,
                        "base": replace(base, affine=AffineConfig())})


def run_sweep(model, class_id, grid, profile, base: OptimConfig | None = None,
              cache_dir=None, workers=1) -> SweepResult:
    """Evaluate every config; completed rows are cached by config hash so an
    interrupted sweep resumes where it stopped."""
    base = base or OptimConfig()
    cache = Path(cache_dir) if cache_dir else None

    def one(cfg):
        path = cache / f"{_row_key(model, class_id, cfg, base)}.json" if cache else None
        if path is not None and path.exists():
            d = read_json(path)
            return SweepRow(cfg, float(d["avg_similarity"]), d.get("error"))
        try:
            row = SweepRow(cfg, float(evaluate_config(model, class_id, cfg, profile, base)))
        except Exception as e:  # noqa: BLE001 - a failing row must not stop the sweep
            log.warning("sweep row %s failed: %s", cfg, e)
            return SweepRow(cfg, float("nan"), f"{type(e).__name__}: {e}")
        if path is not None:
            write_json(path, {"config": cfg, "avg_similarity": row.average_similarity})
        return row

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, grid))
    else:
        rows = [one(cfg) for cfg in grid]
    return SweepResult(rows, rank_rows([r.average_similarity for r in rows]))
