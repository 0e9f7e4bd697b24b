"""ImageNet-scale reproduction: spearman summary, layer fractions and the goldfish sweep.

Needs torchvision state dicts and labeled images on disk:

    PROTOGEN_WEIGHTS_DIR=/weights python3 scripts/run_imagenet_reproduction.py \
        --images /data/imagenet-val-by-class --model resnet18-imagenet --out /tmp/imagenet

``--images`` holds one folder per class index (``12/``, ``34/``, ...).
"""

import argparse
from pathlib import Path

from protogen.experiment import prototype_config, run_evaluation, summary_markdown, write_evaluation
from protogen.model_adapter import load_model
from protogen.profiles import ActivationCache, ImageSetManifest, load_image_set, mean_profile
from protogen.proto_optimizer import OptimConfig
from protogen.sweep import FULL_AXES, build_grid, run_sweep

CLASSES = (12, 34, 249, 429, 558, 640, 669, 694, 705, 760, 786)
GOLDFISH = 1


def manifest(root, c, n):
    files = sorted(p for p in (root / str(c)).glob("*") if p.is_file())[:n]
    if not files:
        raise SystemExit(f"no images for class {c} under {root}")
    return ImageSetManifest(f"imagenet-{c}", [(str(p), c) for p in files], c)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", required=True, type=Path)
    ap.add_argument("--model", default="resnet18-imagenet")
    ap.add_argument("--out", default="/tmp/protogen-imagenet", type=Path)
    ap.add_argument("--per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--skip-sweep", action="store_true")
    args = ap.parse_args()

    model = load_model(args.model)
    cache = ActivationCache(args.out / "cache")
    sets = {c: manifest(args.images, c, args.per_class) for c in CLASSES}
    result = run_evaluation(model, sets, CLASSES, OptimConfig(), args.seed, cache=cache,
                            workers=args.workers)
    write_evaluation(result, args.out / "evaluate")
    print(f"{model.arch_id}: {len(model.layers)} layers")
    print(summary_markdown(result.summary))

    if args.skip_sweep:
        return
    gm = manifest(args.images, GOLDFISH, args.per_class)
    profile = mean_profile(model, load_image_set(gm, model), GOLDFISH, cache, args.workers)
    res = run_sweep(model, GOLDFISH, build_grid(FULL_AXES), profile,
                    prototype_config(OptimConfig(), args.seed, GOLDFISH),
                    args.out / "sweep-cache", args.workers)
    res.save(args.out / "sweep")
    print(res.top_table())


if __name__ == "__main__":
    main()
