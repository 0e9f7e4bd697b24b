"""End-to-end path-similarity evaluation: profiles, anchors, prototypes, curves, summary.

All randomness derives from one run seed through named sub-seeds, and every
written artifact carries the seed, the model weight hash and a config hash.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .pathsim import (
    average_curves,
    layer_fraction_satisfying,
    normalize_curve,
    smooth_curve,
    write_curve_csv,
)
from .plotting import plot_three_series
from .profiles import anchors_from_comparisons, class_comparisons, compare_to_profile, mean_profile
from .proto_optimizer import OptimConfig, generate_prototype, save_prototype
from .utils import atomic_write_text, config_hash, derive_seed, to_jsonable

SERIES = ("prototype", "same_class", "diff_class")


def prototype_config(base: OptimConfig, run_seed, class_id) -> OptimConfig:
    return replace(base, seed=derive_seed(run_seed, f"prototype-{class_id}"))


@dataclass
class EvaluationResult:
    classes: list
    prototypes: dict
    raw: dict  # metric -> series -> SimilarityCurve (class-averaged)
    normalized: dict  # metric -> series -> SimilarityCurve
    smoothed: dict
    per_class_raw: dict  # metric -> class -> series -> curve
    per_class_normalized: dict  # metric -> class -> normalized prototype curve
    anchors: dict
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def _normalize_all(curves, anchors):
    return {k: normalize_curve(c, anchors) for k, c in curves.items()}


def run_evaluation(model, class_sets: dict, classes=None, config: OptimConfig | None = None,
                   seed=0, prototypes=None, cache=None, workers=1,
                   window_mean=10, window_std=5) -> EvaluationResult:
    """Compare prototypes with natural images of their class and of other classes.

    ``class_sets`` maps class id to natural images (or manifests); anchors are
    computed over all of them. Prototypes are generated for ``classes``
    (default: every class in ``class_sets``) unless given in ``prototypes``.
    """
    config = config or OptimConfig()
    classes = sorted(class_sets) if classes is None else [int(c) for c in classes]
    prototypes = dict(prototypes or {})
    for c in classes:
        if c not in prototypes:
            prototypes[c] = generate_prototype(model, c, prototype_config(config, seed, c))
    images = {c: _images(model, s) for c, s in sorted(class_sets.items())}
    profiles = {c: mean_profile(model, ims, c, cache, workers) for c, ims in images.items()}
    names = [l.name for l in model.layers]

    raw, normalized, smoothed, per_class_raw, per_class_norm, anchors = {}, {}, {}, {}, {}, {}
    for metric in ("spearman", "l1"):
        comps = class_comparisons(model, images, metric, seed, cache, workers, profiles)
        anchors[metric] = anchors_from_comparisons(comps, metric)
        per_class_raw[metric] = {}
        per_class_norm[metric] = {}
        proto_curves = []
        for c in classes:
            img = prototypes[c].image if hasattr(prototypes[c], "image") else prototypes[c]
            pc = compare_to_profile(model, img, profiles[c], metric)
            pc.layer_names = names
            proto_curves.append(pc)
            per_class_raw[metric][c] = {"prototype": pc, "same_class": comps[c].same,
                                        "diff_class": comps[c].diff}
            per_class_norm[metric][c] = normalize_curve(pc, anchors[metric])
        same = average_curves([cur for c in classes for cur in comps[c].same_per_image])
        diff = average_curves([cur for c in classes for cur in comps[c].diff_per_image])
        raw[metric] = {"prototype": average_curves(proto_curves), "same_class": same,
                       "diff_class": diff}
        for curve in raw[metric].values():
            curve.layer_names = names
        norm = _normalize_all(raw[metric], anchors[metric])
        # prototype series: mean of per-class normalized curves
        norm["prototype"] = average_curves(list(per_class_norm[metric].values()))
        norm["prototype"].anchors = anchors[metric]
        normalized[metric] = norm
        smoothed[metric] = {k: smooth_curve(v, window_mean, window_std) for k, v in norm.items()}

    result = EvaluationResult(classes, prototypes, raw, normalized, smoothed, per_class_raw,
                              per_class_norm, anchors)
    result.summary = summarize(result)
    result.provenance = {
        "seed": seed,
        "model_hash": model.weight_hash,
        "config_hash": config_hash({"config": config, "classes": classes,
                                    "windows": [window_mean, window_std]}),
        "arch_id": model.arch_id,
    }
    return result


def _images(model, value):
    from .profiles import _as_images

    return _as_images(model, value)


def _band(curve):
    if curve.std is None:
        return float("nan")
    ok = np.isfinite(curve.std)
    return float(curve.std[ok].mean()) if ok.any() else float("nan")


def summarize(result: EvaluationResult) -> dict:
    sp, l1 = result.raw["spearman"], result.raw["l1"]
    table = {k: {"mean": sp[k].mean(), "std": _band(sp[k])} for k in SERIES}
    fractions = {
        "l1_proto_le_same": layer_fraction_satisfying(l1["prototype"], l1["same_class"], "le"),
        "l1_proto_lt_diff": layer_fraction_satisfying(l1["prototype"], l1["diff_class"], "lt"),
        "spearman_proto_ge_same": layer_fraction_satisfying(sp["prototype"], sp["same_class"], "ge"),
    }
    per_class = {}
    for c in result.classes:
        proto = result.prototypes[c]
        per_class[c] = {
            "final_probability": getattr(proto, "final_probability", None),
            "final_logit": getattr(proto, "final_logit", None),
            "normalized_spearman_mean": result.per_class_normalized["spearman"][c].mean(),
            "raw_spearman_mean": result.per_class_raw["spearman"][c]["prototype"].mean(),
            "l1_proto_lt_diff": layer_fraction_satisfying(
                result.per_class_raw["l1"][c]["prototype"],
                result.per_class_raw["l1"][c]["diff_class"], "lt"),
        }
    return {"table": table, "layer_fractions": fractions, "per_class": per_class,
            "n_layers": len(sp["prototype"])}


def summary_markdown(summary: dict) -> str:
    labels = {"prototype": "Prototype", "same_class": "Same class images",
              "diff_class": "Diff class images"}
    lines = ["| | Average spearman similarity |", "|---|---|"]
    for k in SERIES:
        row = summary["table"][k]
        lines.append(f"| {labels[k]} | {row['mean']:.2f} ± {row['std']:.2f} |")
    n = summary["n_layers"]
    fr = summary["layer_fractions"]
    lines += [
        "",
        f"- L1: D_P <= D_I on {fr['l1_proto_le_same']:.1%} of {n} layers",
        f"- L1: D_P < D_I_dc on {fr['l1_proto_lt_diff']:.1%} of {n} layers",
        f"- Spearman: SS_P >= SS_I on {fr['spearman_proto_ge_same']:.1%} of {n} layers",
    ]
    return "\n".join(lines) + "\n"


def write_evaluation(result: EvaluationResult, out_dir, raw_only=False):
    """CSV curves, figures, prototypes and summary under ``out_dir``."""
    out = Path(out_dir)
    prov = result.provenance
    for c in result.classes:
        proto = result.prototypes[c]
        if hasattr(proto, "image"):
            save_prototype(proto, out / "prototypes", **prov)
    kinds = [("raw", result.raw)] if raw_only else [
        ("raw", result.raw), ("normalized", result.normalized), ("smoothed", result.smoothed)]
    for kind, curves in kinds:
        for metric, series in curves.items():
            for name, curve in series.items():
                write_curve_csv(curve, out / "curves" / f"{metric}_{kind}_{name}.csv", **prov)
    for kind, _ in kinds:
        for metric in ("spearman", "l1"):
            render_from_csv(out, metric, kind)
    atomic_write_text(out / "summary.json",
                      json.dumps(to_jsonable({"summary": result.summary, "provenance": prov}),
                                 indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "summary.md", summary_markdown(result.summary))


def render_from_csv(out_dir, metric, kind):
    """Plot the three series stored as CSV; used by both evaluate and report."""
    from .pathsim import read_curve_csv

    out = Path(out_dir)
    curves, meta = {}, {}
    for name in SERIES:
        path = out / "curves" / f"{metric}_{kind}_{name}.csv"
        if not path.exists():
            return None
        curves[name], meta = read_curve_csv(path)
    target = out / "figures" / f"{metric}_{kind}.png"
    plot_three_series(curves, target, title=f"{metric} ({kind})",
                      metadata={k: meta[k] for k in ("seed", "model_hash", "config_hash") if k in meta})
    return target
