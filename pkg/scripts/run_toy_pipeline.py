"""Offline end-to-end run: patch dataset, toy-cnn, prototypes, curves, figures.

    python3 scripts/run_toy_pipeline.py --work /tmp/protogen-toy --classes 0,1,2
"""

import argparse
from pathlib import Path

from protogen.experiment import run_evaluation, summary_markdown, write_evaluation
from protogen.model_adapter import TrainConfig, load_model, train_toy_model
from protogen.profiles import ActivationCache
from protogen.proto_optimizer import OptimConfig
from protogen.toydata import holdout_manifests, make_patch_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="/tmp/protogen-toy")
    ap.add_argument("--classes", default="0,1,2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.work)
    data, model_path = work / "patches", work / "toy-cnn.pt"
    if not model_path.exists():
        if not data.exists():
            make_patch_dataset(data, seed=args.seed)
        train_toy_model(data, TrainConfig(seed=args.seed, out_path=str(model_path)))
    model = load_model(model_path)
    print(f"toy-cnn held-out accuracy {model.metadata['accuracy']:.4f}")

    classes = [int(c) for c in args.classes.split(",")]
    result = run_evaluation(model, holdout_manifests(model), classes, OptimConfig(), args.seed,
                            cache=ActivationCache(work / "cache"))
    write_evaluation(result, work / "run")
    print(summary_markdown(result.summary))
    for c, row in result.summary["per_class"].items():
        print(f"class {c} ({model.class_names[c]}): p={row['final_probability']:.4f} "
              f"normalized spearman={row['normalized_spearman_mean']:.3f} "
              f"L1 below diff-class on {row['l1_proto_lt_diff']:.0%} of layers")
    print(f"artifacts in {work / 'run'}")


if __name__ == "__main__":
    main()
