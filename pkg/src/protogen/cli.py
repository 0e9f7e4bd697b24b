"""Command-line entry point: ``protogen [global flags] COMMAND``."""

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .errors import ProtogenError
from .utils import atomic_write_text, config_hash, write_json

log = logging.getLogger("protogen")


class Ctx:
    def __init__(self, model, weights, seed, out, cache_dir, workers, allow_random_init):
        self.model_spec = model
        self.weights = weights
        self.seed = seed
        self.out = Path(out)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.workers = workers
        self.allow_random_init = allow_random_init
        self._model = None

    @property
    def model(self):
        from .model_adapter import load_model

        if self._model is None:
            if not self.model_spec:
                raise click.UsageError("--model is required for this command")
            self._model = load_model(self.model_spec, self.weights,
                                     allow_random_init=self.allow_random_init, seed=self.seed)
        return self._model

    def activation_cache(self):
        from .profiles import ActivationCache

        return ActivationCache(self.cache_dir / "activations") if self.cache_dir else None

    def provenance(self, config=None):
        return {"seed": self.seed, "model_hash": self.model.weight_hash,
                "config_hash": config_hash(config if config is not None else {})}


def _check_classes(model, classes):
    bad = [c for c in classes if not 0 <= c < model.num_classes]
    if bad:
        raise click.BadParameter(
            f"class index {bad[0]} is outside [0, {model.num_classes - 1}]", param_hint="--class")
    return list(classes)


def _optim_config(ctx: Ctx, steps, lr, pv_steps, hf_weight, scale, rotation, translate, no_affine):
    from .proto_optimizer import AffineConfig, OptimConfig

    cfg = OptimConfig(seed=ctx.seed)
    over = {k: v for k, v in (("steps", steps), ("learning_rate", lr), ("pv_steps", pv_steps),
                              ("hf_weight", hf_weight)) if v is not None}
    cfg = replace(cfg, **over)
    if no_affine:
        return replace(cfg, affine=AffineConfig())
    if scale is not None or rotation is not None or translate is not None:
        a = cfg.affine
        cfg = replace(cfg, affine=AffineConfig(
            tuple(scale) if scale is not None else a.scale_range,
            rotation if rotation is not None else a.rotation_max_deg,
            tuple(translate) if translate is not None else a.translate_frac))
    return cfg


def optim_options(f):
    opts = [
        click.option("--steps", type=int, default=None, help="Optimization steps (512)."),
        click.option("--lr", type=float, default=None, help="Adam learning rate (0.05)."),
        click.option("--pv-steps", type=int, default=None, help="Warm-up steps."),
        click.option("--hf-weight", type=float, default=None, help="High-frequency penalty weight."),
        click.option("--scale", type=float, nargs=2, default=None, help="Scale range LOW HIGH."),
        click.option("--rotation", type=float, default=None, help="Max rotation in degrees."),
        click.option("--translate", type=float, nargs=2, default=None,
                     help="Max translation as image fractions FX FY."),
        click.option("--no-affine", is_flag=True, help="Disable random affine transforms."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _manifests(paths):
    from .profiles import ImageSetManifest

    out = {}
    for p in paths:
        m = ImageSetManifest.load(p)
        if m.class_id is None:
            raise click.BadParameter(f"manifest {p} has no class_id", param_hint="--manifest")
        if m.class_id in out:
            raise click.BadParameter(f"two manifests for class {m.class_id}", param_hint="--manifest")
        out[m.class_id] = m
    return out


@click.group()
@click.option("--model", "model", default=None,
              help="resnet18-imagenet, inceptionv1-imagenet, or a toy-cnn .pt path.")
@click.option("--weights", default=None, type=click.Path(), help="Explicit weights file.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default="protogen-out", show_default=True, type=click.Path())
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--allow-random-init", is_flag=True, help="Permit untrained weights (testing only).")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, model, weights, seed, out, cache_dir, workers, allow_random_init, verbose):
    """Class prototype generation and path-similarity evaluation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = Ctx(model, weights, seed, out, cache_dir, workers, allow_random_init)


@cli.command("train-toy")
@click.option("--dataset", required=True, type=click.Path(), help="Directory of <class>/*.png.")
@click.option("--make-patches", is_flag=True, help="Build the photo-patch dataset if missing.")
@click.option("--epochs", type=int, default=None)
@click.pass_obj
def train_toy(ctx: Ctx, dataset, make_patches, epochs):
    """Train the small offline CNN and write toy-cnn.pt plus its sidecar."""
    from .model_adapter import TrainConfig, train_toy_model
    from .toydata import make_patch_dataset

    data = Path(dataset)
    if make_patches and not data.exists():
        make_patch_dataset(data, seed=ctx.seed)
    cfg = TrainConfig(seed=ctx.seed, out_path=str(ctx.out / "toy-cnn.pt"))
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    handle = train_toy_model(data, cfg)
    click.echo(f"accuracy={handle.metadata['accuracy']:.4f} weight_hash={handle.weight_hash} "
               f"path={cfg.out_path}")


@cli.command()
@click.option("--class", "classes", type=int, multiple=True, required=True)
@optim_options
@click.pass_obj
def generate(ctx: Ctx, classes, steps, lr, pv_steps, hf_weight, scale, rotation, translate,
             no_affine):
    """Generate prototypes: PNG, float array and JSON sidecar per class."""
    from .experiment import prototype_config
    from .proto_optimizer import generate_prototype, save_prototype

    model = ctx.model
    classes = _check_classes(model, classes)
    cfg = _optim_config(ctx, steps, lr, pv_steps, hf_weight, scale, rotation, translate, no_affine)
    prov = ctx.provenance(cfg)
    for c in classes:
        proto = generate_prototype(model, c, prototype_config(cfg, ctx.seed, c))
        path = save_prototype(proto, ctx.out, **prov)
        click.echo(f"class={c} logit={proto.final_logit:.4f} p={proto.final_probability:.4f} "
                   f"-> {path}")


@cli.command()
@click.option("--manifest", "manifests", multiple=True, required=True, type=click.Path(exists=True))
@click.pass_obj
def profile(ctx: Ctx, manifests):
    """Compute and store per-class activation profiles."""
    from .profiles import load_image_set, mean_profile

    model = ctx.model
    for c, m in _manifests(manifests).items():
        prof = mean_profile(model, load_image_set(m, model), c, ctx.activation_cache(),
                            ctx.workers)
        prof.save(ctx.out / "profiles" / f"class_{c}")
        click.echo(f"class={c} n_images={prof.n_images}")


@cli.command()
@click.option("--manifest", "manifests", multiple=True, type=click.Path(exists=True),
              help="One manifest per class (at least two).")
@click.option("--toy-holdout", type=int, default=None,
              help="Use N held-out images per class from a toy-cnn model instead of manifests.")
@click.option("--class", "classes", type=int, multiple=True,
              help="Classes to generate prototypes for (default: all manifest classes).")
@click.option("--prototype-dir", type=click.Path(exists=True), default=None,
              help="Reuse prototype_<c>.npy files instead of generating.")
@click.option("--raw", is_flag=True, help="Only emit unnormalized, unsmoothed curves.")
@optim_options
@click.pass_obj
def evaluate(ctx: Ctx, manifests, toy_holdout, classes, prototype_dir, raw, steps, lr, pv_steps,
             hf_weight, scale, rotation, translate, no_affine):
    """Path-similarity curves, figures and the summary table."""
    from .experiment import run_evaluation, summary_markdown, write_evaluation
    from .proto_optimizer import load_prototype_image

    model = ctx.model
    if toy_holdout is not None:
        from .toydata import holdout_manifests

        sets = holdout_manifests(model, toy_holdout)
    elif manifests:
        sets = _manifests(manifests)
    else:
        raise click.UsageError("give --manifest (repeatable) or --toy-holdout")
    if len(sets) < 2:
        raise click.UsageError("evaluation needs at least two classes")
    classes = _check_classes(model, classes) if classes else sorted(sets)
    missing = [c for c in classes if c not in sets]
    if missing:
        raise click.BadParameter(f"no manifest for class {missing[0]}", param_hint="--class")
    protos = None
    if prototype_dir:
        protos = {c: load_prototype_image(Path(prototype_dir) / f"prototype_{c}.npy")
                  for c in classes}
    cfg = _optim_config(ctx, steps, lr, pv_steps, hf_weight, scale, rotation, translate, no_affine)
    result = run_evaluation(model, sets, classes, cfg, ctx.seed, protos,
                            ctx.activation_cache(), ctx.workers)
    write_evaluation(result, ctx.out, raw_only=raw)
    click.echo(summary_markdown(result.summary), nl=False)


@cli.command()
@click.option("--class", "class_id", type=int, required=True)
@click.option("--manifest", required=True, type=click.Path(exists=True),
              help="Natural images of the class (for the activation profile).")
@click.option("--axes", type=click.Choice(["full", "reduced"]), default="full", show_default=True)
@optim_options
@click.pass_obj
def sweep(ctx: Ctx, class_id, manifest, axes, steps, lr, pv_steps, hf_weight, scale, rotation,
          translate, no_affine):
    """Grid search over affine regularization; resumable through --cache-dir."""
    from .experiment import prototype_config
    from .profiles import ImageSetManifest, load_image_set, mean_profile
    from .sweep import FULL_AXES, REDUCED_AXES, build_grid, run_sweep

    model = ctx.model
    _check_classes(model, [class_id])
    m = ImageSetManifest.load(manifest)
    prof = mean_profile(model, load_image_set(m, model), class_id, ctx.activation_cache(),
                        ctx.workers)
    base = prototype_config(
        _optim_config(ctx, steps, lr, pv_steps, hf_weight, scale, rotation, translate, no_affine),
        ctx.seed, class_id)
    grid = build_grid(FULL_AXES if axes == "full" else REDUCED_AXES)
    cache = ctx.cache_dir / "sweep" if ctx.cache_dir else None
    result = run_sweep(model, class_id, grid, prof, base, cache, ctx.workers)
    result.save(ctx.out)
    prov = ctx.provenance({"base": base, "axes": axes, "class": class_id})
    write_json(ctx.out / "sweep_provenance.json", prov)
    table = result.top_table()
    atomic_write_text(ctx.out / "sweep_top5.md", table + "\n")
    click.echo(table)


@cli.command()
@click.option("--manifest", "manifests", multiple=True, required=True, type=click.Path(exists=True),
              help="Exactly two probe manifests (A then B).")
@click.option("--target", type=int, required=True, help="Class the probe images should receive.")
@click.option("--watch", type=int, multiple=True, help="Classes whose probabilities are reported.")
@click.pass_obj
def probe(ctx: Ctx, manifests, target, watch):
    """Contrast two probe image sets as a Markdown table."""
    from .probe import compare_sets, evaluate_set
    from .profiles import ImageSetManifest

    if len(manifests) != 2:
        raise click.UsageError("probe takes exactly two --manifest values")
    model = ctx.model
    _check_classes(model, [target, *watch])
    prov = ctx.provenance({"target": target, "watch": list(watch)})
    reports = []
    for i, p in enumerate(manifests):
        rep = evaluate_set(model, ImageSetManifest.load(p), target, watch)
        d = json.loads(rep.to_json())
        d["provenance"] = prov
        write_json(ctx.out / f"probe_{'ab'[i]}.json", d)
        reports.append(rep)
    md = compare_sets(*reports, class_names=model.class_names).markdown(model.class_names)
    atomic_write_text(ctx.out / "probe_contrast.md", md + "\n")
    click.echo(md)


@cli.command()
@click.option("--from", "src", required=True, type=click.Path(exists=True),
              help="An evaluate output directory.")
@click.pass_obj
def report(ctx: Ctx, src):
    """Re-plot figures from stored curve CSVs (into --out)."""
    import shutil

    from .experiment import render_from_csv

    src, out = Path(src), ctx.out
    if src.resolve() != out.resolve():
        shutil.copytree(src / "curves", out / "curves", dirs_exist_ok=True)
    made = [p for kind in ("raw", "normalized", "smoothed") for metric in ("spearman", "l1")
            if (p := render_from_csv(out, metric, kind)) is not None]
    if not made:
        raise click.UsageError(f"no curve CSVs under {src / 'curves'}")
    summary = src / "summary.md"
    if summary.exists():
        click.echo(summary.read_text(), nl=False)
    for p in made:
        click.echo(str(p))


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="protogen", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except ProtogenError as e:
        click.echo(f"error: {e}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
