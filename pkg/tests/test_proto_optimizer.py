import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from protogen.errors import ConfigurationError, InputError
from protogen.proto_optimizer import (
    AffineConfig,
    OptimConfig,
    affine_transform,
    generate_prototype,
    init_baseline,
    load_prototype_image,
    loss_class,
    loss_hf,
    loss_pv,
    random_affine,
    save_prototype,
)
from protogen.utils import derive_seed

FAST = OptimConfig(steps=12, pv_steps=8)


def test_loss_pv_examples():
    assert float(loss_pv(torch.zeros(10))) == pytest.approx(0.0, abs=1e-12)
    # softmax([ln 3, 0]) = (0.75, 0.25); population variance 0.0625
    assert float(loss_pv(torch.tensor([math.log(3.0), 0.0]))) == pytest.approx(0.0625)


def test_loss_hf_examples():
    assert float(loss_hf(torch.full((3, 4, 4), 0.3))) == 0.0
    # pair diffs 1, 1, 0, 0
    assert float(loss_hf(torch.tensor([[[0.0, 1.0], [0.0, 1.0]]]))) == 0.5
    assert float(loss_hf(torch.tensor([[[0.0, 1.0], [1.0, 0.0]]]))) == 1.0


@given(st.floats(0, 10))
def test_loss_hf_homogeneous(k):
    x = torch.rand(3, 5, 6, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    assert float(loss_hf(k * x)) == pytest.approx(k * float(loss_hf(x)), rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=12), st.randoms())
def test_loss_pv_permutation_invariant(logits, rnd):
    shuffled = list(logits)
    rnd.shuffle(shuffled)
    a = float(loss_pv(torch.tensor(logits, dtype=torch.float64)))
    b = float(loss_pv(torch.tensor(shuffled, dtype=torch.float64)))
    assert a >= 0 and a == pytest.approx(b, abs=1e-15)


def test_loss_class():
    assert float(loss_class(torch.tensor([1.0, 5.0]), 1)) == -5.0
    with pytest.raises(InputError):
        loss_class(torch.zeros(3), 3)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        OptimConfig(learning_rate=0)
    with pytest.raises(ConfigurationError):
        OptimConfig(hf_weight=-1)
    with pytest.raises(ConfigurationError):
        AffineConfig(scale_range=(1.2, 0.8))
    with pytest.raises(ConfigurationError):
        AffineConfig(rotation_max_deg=200)
    assert OptimConfig().learning_rate == 0.05 and OptimConfig().steps == 512
    assert OptimConfig.from_dict({"affine": {"rotation_max_deg": 30}}).affine.rotation_max_deg == 30.0


def test_affine_identity_and_rotation():
    x = torch.rand(3, 9, 9, generator=torch.Generator().manual_seed(0))
    assert torch.allclose(affine_transform(x), x, atol=1e-6)
    one = torch.zeros(1, 9, 9)
    one[0, 1, 4] = 1.0  # three rows above center
    rot = affine_transform(one, angle_deg=90)
    # counter-clockwise as displayed: up -> left
    assert rot[0, 4, 1] == pytest.approx(1.0, abs=1e-5)
    assert float(rot.sum()) == pytest.approx(1.0, abs=1e-5)


def test_affine_translation_and_padding():
    x = torch.ones(1, 8, 8)
    out = affine_transform(x, translate=(2.0, 0.0))
    assert torch.all(out[0, :, :2] == 0) and torch.allclose(out[0, :, 2:], torch.ones(8, 6))
    assert torch.all(affine_transform(x, scale=0.5)[0, 0] == 0)


def test_random_affine_identity_passthrough():
    x = torch.rand(3, 4, 4)
    assert random_affine(x, AffineConfig(), np.random.default_rng(0)) is x


def test_baseline_warmup_balances_softmax(toy_model):
    # pinned: max softmax after warm-up < 2 / num_classes
    x = init_baseline(toy_model, OptimConfig())
    with torch.no_grad():
        p = torch.softmax(toy_model.logits(x[None])[0], -1)
    assert float(p.max()) < 2 / toy_model.num_classes
    assert float(x.min()) >= 0 and float(x.max()) <= 1


def test_generate_prototype_basic(random_toy, tmp_path):
    proto = generate_prototype(random_toy, 3, FAST)
    assert proto.image.shape == random_toy.input_shape
    assert 0 <= float(proto.image.min()) and float(proto.image.max()) <= 1
    assert len(proto.loss_history) == FAST.steps
    assert 0 <= proto.final_probability <= 1
    path = save_prototype(proto, tmp_path, seed=0)
    assert torch.equal(load_prototype_image(path), proto.image)
    assert (tmp_path / "prototype_3.png").exists() and (tmp_path / "prototype_3.json").exists()
    with pytest.raises(InputError):
        generate_prototype(random_toy, 10, FAST)


def test_zero_steps_and_zero_warmup(random_toy):
    raw = init_baseline(random_toy, OptimConfig(pv_steps=0, seed=5))
    gen = torch.Generator().manual_seed(derive_seed(5, "init"))
    assert torch.equal(raw, torch.rand(random_toy.input_shape, generator=gen))
    cfg = OptimConfig(steps=0, pv_steps=3, seed=5)
    assert torch.equal(generate_prototype(random_toy, 0, cfg).image, init_baseline(random_toy, cfg))
    assert torch.equal(init_baseline(random_toy, cfg), init_baseline(random_toy, cfg))


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generation_deterministic(random_toy, seed):
    cfg = OptimConfig(steps=4, pv_steps=2, seed=seed)
    a = generate_prototype(random_toy, 1, cfg)
    b = generate_prototype(random_toy, 1, cfg)
    assert torch.equal(a.image, b.image)


def test_more_steps_raise_the_logit(toy_model):
    short = generate_prototype(toy_model, 0, OptimConfig(steps=2, pv_steps=16))
    long = generate_prototype(toy_model, 0, OptimConfig(steps=64, pv_steps=16))
    assert long.final_logit > short.final_logit
    assert long.final_logit > long.baseline_logit
