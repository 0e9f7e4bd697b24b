"""Hypothesis probes: accuracy and watched-class probabilities on curated image sets."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .model_adapter import predict
from .profiles import ImageSetManifest, load_images
from .utils import to_jsonable


@dataclass
class ProbeReport:
    set_id: str
    n_images: int
    target_class: int
    accuracy: float
    watched: dict
    per_image: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(to_jsonable(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["watched"] = {int(k): v for k, v in d["watched"].items()}
        return cls(**d)


def evaluate_set(model, manifest: ImageSetManifest, target_class, watch_classes=()) -> ProbeReport:
    """Top-1 accuracy against ``target_class`` and mean softmax of each watched class."""
    if not 0 <= target_class < model.num_classes:
        raise InputError(f"target class {target_class} out of range")
    watch = [int(c) for c in watch_classes]
    for c in watch:
        if not 0 <= c < model.num_classes:
            raise InputError(f"watched class {c} out of range")
    images, paths, failures = load_images(manifest, model)
    if not images:
        raise InputError(f"no decodable images in {manifest.set_id!r}")
    per_image = []
    probs = []
    for path, im in zip(paths, images):
        cls, p = predict(model, im)
        probs.append(p)
        per_image.append({
            "path": str(path),
            "predicted": cls,
            "p_predicted": float(p[cls]),
            "p_target": float(p[target_class]),
            "p_watched": {c: float(p[c]) for c in watch},
        })
    probs = np.stack(probs)
    correct = np.array([r["predicted"] == target_class for r in per_image])
    return ProbeReport(
        manifest.set_id, len(images), int(target_class), float(correct.mean()),
        {c: float(probs[:, c].mean()) for c in watch}, per_image, failures)


@dataclass
class ContrastSummary:
    labels: tuple
    target_class: int
    columns: list  # (name, value_a, value_b)

    @property
    def deltas(self):
        return {name: a - b for name, a, b in self.columns}

    def higher(self, name):
        for n, a, b in self.columns:
            if n == name:
                if a == b:
                    return None
                return self.labels[0] if a > b else self.labels[1]
        raise KeyError(name)

    def markdown(self, class_names=None) -> str:
        header = ["", *(n for n, _, _ in self.columns)]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for row, label in enumerate(self.labels):
            cells = [f"**{label}**"]
            for name, a, b in self.columns:
                v, other = (a, b) if row == 0 else (b, a)
                txt = f"{100 * v:.1f}%" if name == "Accuracy" else f"{v:.2f}"
                cells.append(f"**{txt}**" if v > other else txt)
            lines.append("| " + " | ".join(cells) + " |")
        deltas = ["Δ (first − second)"]
        for name, a, b in self.columns:
            d = a - b
            deltas.append(f"{100 * d:+.1f} pts" if name == "Accuracy" else f"{d:+.2f}")
        lines.append("| " + " | ".join(deltas) + " |")
        return "\n".join(lines) + "\n"


def compare_sets(a: ProbeReport, b: ProbeReport, class_names=None) -> ContrastSummary:
    """Side-by-side accuracy and watched probabilities; larger values flagged in Markdown."""
    if a.target_class != b.target_class:
        raise InputError("reports have different target classes")
    if set(a.watched) != set(b.watched):
        raise InputError("reports watch different classes")

    def pname(c):
        name = class_names[c] if class_names else str(c)
        return f"Probability({name})"

    cols = [("Accuracy", a.accuracy, b.accuracy)]
    cols += [(pname(c), a.watched[c], b.watched[c]) for c in sorted(a.watched)]
    return ContrastSummary((a.set_id, b.set_id), a.target_class, cols)
