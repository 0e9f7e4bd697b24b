import threading

import numpy as np
import pytest
import torch
from PIL import Image

from protogen.errors import ConfigurationError, InputError, ModelLoadError
from protogen.images import decode_image, encode_png
from protogen.model_adapter import (
    ToyCNN,
    TrainConfig,
    forward_with_activations,
    load_model,
    predict,
    split_holdout,
    train_toy_model,
)


def _naive_toy_forward(net: ToyCNN, x):
    """Independent numpy forward pass of the toy network (eval mode)."""
    def conv(x, w, b):
        c_out, c_in, k, _ = w.shape
        p = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        h, wd = x.shape[1:]
        out = np.zeros((c_out, h, wd))
        for i in range(k):
            for j in range(k):
                out += np.einsum("oc,chw->ohw", w[:, :, i, j], p[:, i:i + h, j:j + wd])
        return out + b[:, None, None]

    def bn(x, m):
        g = m.weight.numpy()[:, None, None]
        return (x - m.running_mean.numpy()[:, None, None]) / np.sqrt(
            m.running_var.numpy()[:, None, None] + m.eps) * g + m.bias.numpy()[:, None, None]

    def pool(x):
        c, h, w = x.shape
        return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))

    f = net.features
    x = np.maximum(bn(conv(x, f[0].weight.numpy(), f[0].bias.numpy()), f[1]), 0)
    x = pool(x)
    x = np.maximum(bn(conv(x, f[4].weight.numpy(), f[4].bias.numpy()), f[5]), 0)
    x = pool(x)
    x = np.maximum(bn(conv(x, f[8].weight.numpy(), f[8].bias.numpy()), f[9]), 0)
    return net.fc.weight.numpy() @ x.mean(axis=(1, 2)) + net.fc.bias.numpy()


def test_toy_forward_matches_numpy_oracle(random_toy):
    for image in (torch.zeros(random_toy.input_shape),
                  torch.rand(random_toy.input_shape, generator=torch.Generator().manual_seed(0))):
        logits, _ = forward_with_activations(random_toy, image)
        x = random_toy.preprocess(image[None])[0].double().numpy()
        expected = _naive_toy_forward(random_toy.module.double(), x)
        random_toy.module.float()
        np.testing.assert_allclose(logits, expected, atol=1e-5)


def test_toy_layers_and_record(random_toy):
    names = [l.name for l in random_toy.layers]
    assert names[:3] == ["features.0", "features.1", "features.2"]
    assert names[-1] == "fc" and len(names) == 16
    _, rec = forward_with_activations(random_toy, torch.zeros(random_toy.input_shape))
    assert len(rec) == 16 and rec.shapes[0] == 16 * 32 * 32 and rec.shapes[-1] == 10


@pytest.mark.parametrize("spec,count", [("resnet18-imagenet", 67), ("inceptionv1-imagenet", 223)])
def test_imagenet_layer_counts(spec, count):
    model = load_model(spec, allow_random_init=True)
    assert len(model.layers) == count
    assert model.input_shape == (3, 224, 224) and model.num_classes == 1000


def test_predict_ties_and_margins():
    from protogen.model_adapter import softmax

    p = softmax(np.zeros(4))
    assert np.allclose(p, 0.25) and int(np.argmax(p)) == 0
    assert softmax(np.r_[0.0, 0.0, 50.0])[2] == pytest.approx(1.0)


def test_same_image_twice_is_bitwise_identical(random_toy):
    im = torch.rand(random_toy.input_shape, generator=torch.Generator().manual_seed(3))
    a = forward_with_activations(random_toy, im)[1]
    b = forward_with_activations(random_toy, im)[1]
    assert len(a) == len(random_toy.layers)
    assert all(np.array_equal(x, y) for x, y in zip(a.entries, b.entries))


def test_trained_toy_holdout_accuracy(toy_model):
    hold = toy_model.metadata["holdout"]
    correct = sum(predict(toy_model, decode_image(p, toy_model.input_shape))[0] == lab
                  for p, lab in hold)
    assert correct / len(hold) == pytest.approx(toy_model.metadata["accuracy"])
    assert len(toy_model.layers) == 16


def test_input_validation(random_toy):
    with pytest.raises(InputError):
        predict(random_toy, torch.zeros(3, 16, 16))
    with pytest.raises(InputError):
        predict(random_toy, torch.full(random_toy.input_shape, 1.5))
    cls, p = predict(random_toy, torch.zeros(random_toy.input_shape))
    assert 0 <= cls < 10 and p.sum() == pytest.approx(1.0)


def test_load_errors(tmp_path, monkeypatch):
    monkeypatch.delenv("PROTOGEN_WEIGHTS_DIR", raising=False)
    with pytest.raises(ConfigurationError):
        load_model("vgg-imagenet")
    with pytest.raises(ConfigurationError):
        load_model("resnet18-imagenet")
    with pytest.raises(ConfigurationError):
        load_model("toy-cnn")
    bad = tmp_path / "bad.pth"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ModelLoadError):
        load_model("resnet18-imagenet", weights_path=bad)
    with pytest.raises(ModelLoadError):
        load_model(tmp_path / "missing.pt")


def test_concurrent_capture_is_isolated(random_toy):
    images = [torch.rand(random_toy.input_shape, generator=torch.Generator().manual_seed(i))
              for i in range(6)]
    expected = [forward_with_activations(random_toy, im)[1].entries[-1] for im in images]
    got = [None] * len(images)

    def work(i):
        for _ in range(5):
            got[i] = forward_with_activations(random_toy, images[i])[1].entries[-1]

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(images))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for e, g in zip(expected, got):
        np.testing.assert_array_equal(e, g)


def test_split_holdout_is_stratified():
    labels = [0] * 10 + [1] * 20
    train, hold = split_holdout(labels, 0.2, seed=0)
    assert sorted(np.r_[train, hold].tolist()) == list(range(30))
    assert sum(labels[i] == 0 for i in hold) == 2 and sum(labels[i] == 1 for i in hold) == 4
    assert np.array_equal(hold, split_holdout(labels, 0.2, seed=0)[1])


def test_train_toy_deterministic(tmp_path):
    root = tmp_path / "data"
    rng = np.random.default_rng(0)
    for c, color in enumerate([(200, 30, 30), (30, 200, 30)]):
        (root / f"c{c}").mkdir(parents=True)
        for i in range(10):
            arr = np.clip(np.array(color) + rng.normal(0, 20, (32, 32, 3)), 0, 255).astype(np.uint8)
            Image.fromarray(arr).save(root / f"c{c}" / f"{i}.png")
    cfg = TrainConfig(seed=7, epochs=2, out_path=str(tmp_path / "a.pt"))
    a = train_toy_model(root, cfg)
    b = train_toy_model(root, TrainConfig(seed=7, epochs=2, out_path=str(tmp_path / "b.pt")))
    assert a.weight_hash == b.weight_hash
    loaded = load_model(tmp_path / "a.pt")
    assert loaded.weight_hash == a.weight_hash and loaded.class_names == ["c0", "c1"]


def test_png_round_trip_solid_color(tmp_path):
    image = torch.zeros(3, 32, 32)
    image[0] = 1.0
    image[2] = 128 / 255
    path = tmp_path / "solid.png"
    path.write_bytes(encode_png(image))
    assert torch.equal(decode_image(path, (3, 32, 32)), image)
    assert decode_image(path, (3, 16, 16)).shape == (3, 16, 16)
