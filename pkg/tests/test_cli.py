import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from protogen.cli import cli, main
from protogen.pathsim import read_curve_csv
from protogen.profiles import compare_to_profile, load_image_set, mean_profile
from protogen.proto_optimizer import load_prototype_image
from protogen.toydata import holdout_manifests
from protogen.utils import file_sha256, read_json

FAST = ["--steps", "8", "--pv-steps", "4"]


def run(args):
    result = CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)
    return result


@pytest.fixture(scope="module")
def manifests(toy_model, tmp_path_factory):
    d = tmp_path_factory.mktemp("manifests")
    paths = []
    for c, m in holdout_manifests(toy_model, per_class=6).items():
        if c < 3:
            m.save(d / f"class_{c}.json")
            paths.append(d / f"class_{c}.json")
    return paths


def test_generate_defaults_and_provenance(toy_model_path, toy_model, tmp_path):
    res = run(["--model", toy_model_path, "--seed", 3, "--out", tmp_path, "generate", "--class", 2])
    assert res.exit_code == 0, res.output
    side = read_json(tmp_path / "prototype_2.json")
    assert side["config"]["steps"] == 512 and side["config"]["learning_rate"] == 0.05
    assert side["seed"] == 3 and side["model_hash"] == toy_model.weight_hash
    assert len(side["config_hash"]) == 16
    assert (tmp_path / "prototype_2.png").exists() and (tmp_path / "prototype_2.npy").exists()


def test_generate_invalid_class(toy_model_path, tmp_path):
    res = CliRunner().invoke(cli, ["--model", str(toy_model_path), "--out", str(tmp_path),
                                   "generate", "--class", "10"])
    assert res.exit_code != 0 and "class index 10" in res.output
    assert main(["--model", str(toy_model_path), "generate", "--class", "-1"]) != 0


def test_unknown_model_exits_nonzero(tmp_path):
    assert main(["--model", "nope", "--out", str(tmp_path), "generate", "--class", "0"]) == 2


def test_evaluate_raw_matches_path_similarity(toy_model_path, toy_model, manifests, tmp_path):
    res = run(["--model", toy_model_path, "--out", tmp_path, "evaluate", "--raw", "--class", 1,
               *sum((["--manifest", m] for m in manifests), []), *FAST])
    assert res.exit_code == 0, res.output
    assert "Prototype" in res.output
    assert not (tmp_path / "curves" / "spearman_normalized_prototype.csv").exists()
    proto = load_prototype_image(tmp_path / "prototypes" / "prototype_1.npy")
    sets = holdout_manifests(toy_model, per_class=6)
    prof = mean_profile(toy_model, load_image_set(sets[1], toy_model), 1)
    for metric in ("spearman", "l1"):
        curve, meta = read_curve_csv(tmp_path / "curves" / f"{metric}_raw_prototype.csv")
        expected = compare_to_profile(toy_model, proto, prof, metric)
        np.testing.assert_array_equal(curve.values, expected.values)
        assert meta["model_hash"] == toy_model.weight_hash and meta["seed"] == "0"


def test_evaluate_then_report_is_byte_identical(toy_model_path, manifests, tmp_path):
    ev, rep = tmp_path / "ev", tmp_path / "rep"
    res = run(["--model", toy_model_path, "--out", ev, "evaluate",
               *sum((["--manifest", m] for m in manifests), []), *FAST])
    assert res.exit_code == 0, res.output
    figs = sorted((ev / "figures").glob("*.png"))
    assert len(figs) == 6
    assert Image.open(figs[0]).text["model_hash"]
    summary = read_json(ev / "summary.json")
    assert set(summary["provenance"]) >= {"seed", "model_hash", "config_hash"}
    res = run(["--model", toy_model_path, "--out", rep, "report", "--from", ev])
    assert res.exit_code == 0, res.output
    for f in figs:
        assert file_sha256(f) == file_sha256(rep / "figures" / f.name)


def test_sweep_full_axes_rows(toy_model_path, manifests, tmp_path):
    res = run(["--model", toy_model_path, "--out", tmp_path, "sweep", "--class", 0,
               "--manifest", manifests[0], "--axes", "full", "--steps", 1, "--pv-steps", 0])
    assert res.exit_code == 0, res.output
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 126
    ranking = json.loads((tmp_path / "sweep_ranking.json").read_text())
    assert sorted(ranking["ranking"]) == list(range(125))
    assert (tmp_path / "sweep_top5.md").read_text().count("\n") == 7


def test_probe_markdown(toy_model_path, manifests, tmp_path):
    res = run(["--model", toy_model_path, "--out", tmp_path, "probe", "--manifest", manifests[0],
               "--manifest", manifests[1], "--target", 0, "--watch", 1])
    assert res.exit_code == 0, res.output
    md = (tmp_path / "probe_contrast.md").read_text()
    assert md.startswith("|  | Accuracy |") and "Δ" in md
    assert read_json(tmp_path / "probe_a.json")["provenance"]["seed"] == 0


def test_profile_command(toy_model_path, manifests, tmp_path):
    res = run(["--model", toy_model_path, "--out", tmp_path, "profile", "--manifest", manifests[0]])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "profiles" / "class_0.npz").exists()


def _tiny_dataset(root):
    rng = np.random.default_rng(1)
    for c in range(2):
        (root / f"k{c}").mkdir(parents=True)
        for i in range(6):
            arr = (rng.random((32, 32, 3)) * 120 + 100 * c).astype(np.uint8)
            Image.fromarray(arr).save(root / f"k{c}" / f"{i}.png")
    return root


def test_train_toy_seed_is_reproducible(tmp_path):
    data = _tiny_dataset(tmp_path / "data")
    hashes = []
    for run_dir in ("a", "b"):
        res = run(["--seed", 7, "--out", tmp_path / run_dir, "train-toy", "--dataset", data,
                   "--epochs", 1])
        assert res.exit_code == 0, res.output
        hashes.append(file_sha256(tmp_path / run_dir / "toy-cnn.pt"))
    assert hashes[0] == hashes[1]
