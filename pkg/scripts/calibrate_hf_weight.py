"""Pick the default high-frequency penalty weight on the toy model.

For each candidate weight, generates one prototype per class with the
otherwise-default optimization config and scores it by mean normalized
Spearman path similarity against its class profile. The weight with the
highest class-averaged score becomes ``DEFAULT_HF_WEIGHT``.

    python scripts/calibrate_hf_weight.py --work /tmp/protogen-calib
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from protogen.model_adapter import TrainConfig, load_model, train_toy_model
from protogen.pathsim import normalize_curve
from protogen.profiles import anchors_from_comparisons, class_comparisons, compare_to_profile
from protogen.proto_optimizer import OptimConfig, generate_prototype
from protogen.toydata import holdout_manifests, make_patch_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="/tmp/protogen-calib")
    ap.add_argument("--weights", default="0,1,3,10,30,100,300")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = Path(args.work) / "patches"
    model_path = data / "toy-cnn.pt"
    if not model_path.exists():
        make_patch_dataset(data, seed=args.seed)
        train_toy_model(data, TrainConfig(seed=args.seed))
    model = load_model(model_path)
    sets = holdout_manifests(model, args.per_class)
    comps = class_comparisons(model, sets, "spearman", seed=args.seed)
    anchors = anchors_from_comparisons(comps, "spearman")

    results = {}
    for w in (float(v) for v in args.weights.split(",")):
        cfg = replace(OptimConfig(seed=args.seed), hf_weight=w)
        scores, probs = [], []
        for c, comp in comps.items():
            proto = generate_prototype(model, c, cfg)
            curve = compare_to_profile(model, proto.image, comp.profile, "spearman")
            scores.append(normalize_curve(curve, anchors).mean())
            probs.append(proto.final_probability)
        results[w] = float(np.mean(scores))
        print(f"hf_weight={w:<6g} mean normalized spearman={results[w]:.4f} "
              f"min p(target)={min(probs):.4f}", flush=True)
    best = max(results, key=results.get)
    print(f"best hf_weight: {best:g}")


if __name__ == "__main__":
    main()
