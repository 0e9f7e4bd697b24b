"""Classifier wrapper: prediction, ordered layer enumeration, activation capture.

Every named submodule of the wrapped network (the root excluded) that
produces a tensor is a layer. Layers are ordered by when their first
output is produced during a forward pass, and a layer's activation is its
module output. Modules invoked more than once per pass (torchvision's
shared ReLU in residual blocks) keep the output of their last call.

Capture hooks are registered once per handle and write into a
thread-local buffer, so concurrent forward passes never see each other's
activations.
"""

import hashlib
import os
import pickle
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, IngestionError, InputError, ModelLoadError
from .images import decode_image
from .utils import read_json, write_json

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
BUILTIN_SPECS = ("resnet18-imagenet", "inceptionv1-imagenet", "toy-cnn")
WEIGHTS_ENV = "PROTOGEN_WEIGHTS_DIR"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass(frozen=True)
class LayerId:
    index: int
    name: str


@dataclass
class ActivationRecord:
    """Flattened per-layer activations for one input."""

    entries: list
    class_label: int | None = None

    def __len__(self):
        return len(self.entries)

    @property
    def shapes(self):
        return tuple(e.shape[0] for e in self.entries)


_capture = threading.local()


class ModelHandle:
    """A read-only, inference-mode classifier with an enumerated layer list."""

    def __init__(self, module, arch_id, num_classes, input_shape, mean, std,
                 class_names=None, metadata=None):
        if len(mean) != input_shape[0] or len(std) != input_shape[0]:
            raise ConfigurationError("preprocess mean/std must have one entry per channel")
        if any(s <= 0 for s in std):
            raise ConfigurationError("preprocess std entries must be strictly positive")
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.arch_id = arch_id
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.mean = tuple(float(v) for v in mean)
        self.std = tuple(float(v) for v in std)
        self.class_names = list(class_names) if class_names else [str(i) for i in range(num_classes)]
        self.metadata = dict(metadata or {})
        self._mean_t = torch.tensor(self.mean, dtype=torch.float32).view(1, -1, 1, 1)
        self._std_t = torch.tensor(self.std, dtype=torch.float32).view(1, -1, 1, 1)
        self._key = object()
        self.layers = self._enumerate_layers()
        if not self.layers:
            raise ConfigurationError(f"{arch_id}: model exposes no layers")
        self.weight_hash = state_dict_hash(self.module)

    def _enumerate_layers(self):
        modules = [(n, m) for n, m in self.module.named_modules() if n]
        order = []
        seen = set()

        def make_probe(name):
            def probe(_mod, _inp, out):
                if isinstance(out, torch.Tensor) and name not in seen:
                    seen.add(name)
                    order.append(name)
            return probe

        handles = [m.register_forward_hook(make_probe(n)) for n, m in modules]
        try:
            with torch.no_grad():
                self.logits(torch.zeros((1, *self.input_shape)))
        finally:
            for h in handles:
                h.remove()

        by_name = dict(modules)
        key = self._key
        for name in order:
            def hook(_mod, _inp, out, name=name):
                buf = getattr(_capture, "buffers", {}).get(key)
                if buf is not None and isinstance(out, torch.Tensor):
                    buf[name] = out.detach()
            by_name[name].register_forward_hook(hook)
        return [LayerId(i, n) for i, n in enumerate(order)]

    def preprocess(self, x):
        return (x - self._mean_t.to(x.dtype)) / self._std_t.to(x.dtype)

    def logits(self, x):
        """Differentiable logits for a batch ``(N, C, H, W)`` of unit-interval images."""
        out = self.module(self.preprocess(x))
        if not isinstance(out, torch.Tensor):
            out = out[0]
        return out

    def check_image(self, image):
        if isinstance(image, np.ndarray):
            image = torch.from_numpy(image)
        if not isinstance(image, torch.Tensor):
            raise InputError("image must be a tensor or array")
        if tuple(image.shape) != self.input_shape:
            raise InputError(f"image shape {tuple(image.shape)} != model input {self.input_shape}")
        image = image.to(torch.float32)
        if not torch.isfinite(image).all() or image.min() < 0 or image.max() > 1:
            raise InputError("image intensities must lie in [0, 1]")
        return image

    def __repr__(self):
        return f"ModelHandle({self.arch_id!r}, classes={self.num_classes}, layers={len(self.layers)})"


def state_dict_hash(module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def forward_with_activations(model: ModelHandle, image):
    """Logits and per-layer flattened activations from one inference pass."""
    image = model.check_image(image)
    buffers = getattr(_capture, "buffers", None)
    if buffers is None:
        buffers = _capture.buffers = {}
    buf = buffers[model._key] = {}
    try:
        with torch.no_grad():
            logits = model.logits(image[None])[0]
    finally:
        del buffers[model._key]
    missing = [l.name for l in model.layers if l.name not in buf]
    if missing:
        raise InputError(f"layers produced no activation: {missing[:3]}")
    entries = [buf[l.name][0].reshape(-1).numpy().astype(np.float32, copy=True)
               for l in model.layers]
    return logits.numpy().astype(np.float32), ActivationRecord(entries)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict(model: ModelHandle, image):
    """``(class, probabilities)``; ties go to the lowest class index."""
    image = model.check_image(image)
    with torch.no_grad():
        logits = model.logits(image[None])[0].numpy()
    probs = softmax(logits)
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# toy model


class ToyCNN(nn.Module):
    def __init__(self, num_classes=10, width=16):
        super().__init__()
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1), nn.BatchNorm2d(w), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 3, padding=1), nn.BatchNorm2d(2 * w), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * w, 4 * w, 3, padding=1), nn.BatchNorm2d(4 * w), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.flatten = nn.Flatten()
        self.dropout = nn.Dropout(0.2)
        self.fc = nn.Linear(4 * w, num_classes)

    def forward(self, x):
        x = self.features(x)
        x = self.flatten(self.pool(x))
        return self.fc(self.dropout(x))


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    lr: float = 2e-3
    weight_decay: float = 1e-4
    holdout_frac: float = 0.2
    width: int = 16
    image_size: int = 32
    out_path: str | None = None


@dataclass
class LabeledImages:
    paths: list
    labels: list
    class_names: list = field(default_factory=list)


def scan_dataset(dataset_path) -> LabeledImages:
    """Read a ``root/<class_name>/<image>`` tree; labels follow sorted class names."""
    root = Path(dataset_path)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    paths, labels = [], []
    for label, d in enumerate(class_dirs):
        files = sorted(f for f in d.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        paths += files
        labels += [label] * len(files)
    if not paths:
        raise IngestionError(f"no labeled images under {root}")
    return LabeledImages(paths, labels, [d.name for d in class_dirs])


def split_holdout(labels, frac, seed):
    """Stratified deterministic split; returns (train_idx, holdout_idx), both sorted."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    hold = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = int(round(len(idx) * frac))
        hold += rng.permutation(idx)[:n].tolist()
    hold = np.sort(np.array(hold, dtype=int))
    train = np.setdiff1d(np.arange(len(labels)), hold)
    return train, hold


def _accuracy(module, x, y, mean, std, batch=256):
    module.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(x), batch):
            out = module((x[i:i + batch] - mean) / std)
            correct += int((out.argmax(1) == y[i:i + batch]).sum())
    return correct / len(x)


def train_toy_model(dataset_path, config: TrainConfig | None = None) -> ModelHandle:
    """Train :class:`ToyCNN` on an image-folder dataset and persist it.

    Weights go to ``config.out_path`` (default ``<dataset>/toy-cnn.pt``)
    with a JSON sidecar holding seed, held-out accuracy, class names and
    the held-out file list.
    """
    cfg = config or TrainConfig()
    data = scan_dataset(dataset_path)
    shape = (3, cfg.image_size, cfg.image_size)
    try:
        x = torch.stack([decode_image(p, shape) for p in data.paths])
    except OSError as e:
        raise IngestionError(f"cannot decode dataset image: {e}") from e
    y = torch.tensor(data.labels)
    train_idx, hold_idx = split_holdout(data.labels, cfg.holdout_frac, cfg.seed)

    xt = x[train_idx]
    mean = xt.mean(dim=(0, 2, 3))
    std = xt.std(dim=(0, 2, 3)).clamp_min(1e-3)
    mean_t, std_t = mean.view(1, -1, 1, 1), std.view(1, -1, 1, 1)

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    num_classes = len(data.class_names)
    net = ToyCNN(num_classes, cfg.width)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    loss_fn = nn.CrossEntropyLoss()
    yt = y[train_idx]
    for _ in range(cfg.epochs):
        net.train()
        perm = torch.randperm(len(xt), generator=gen)
        for i in range(0, len(perm), cfg.batch_size):
            b = perm[i:i + cfg.batch_size]
            opt.zero_grad()
            loss = loss_fn(net((xt[b] - mean_t) / std_t), yt[b])
            loss.backward()
            opt.step()

    acc = _accuracy(net, x[hold_idx], y[hold_idx], mean_t, std_t) if len(hold_idx) else float("nan")
    root = Path(dataset_path)
    out = Path(cfg.out_path) if cfg.out_path else root / "toy-cnn.pt"
    metadata = {
        "arch_id": "toy-cnn",
        "seed": cfg.seed,
        "accuracy": acc,
        "class_names": data.class_names,
        "num_classes": num_classes,
        "input_shape": list(shape),
        "mean": mean.tolist(),
        "std": std.tolist(),
        "width": cfg.width,
        "train_config": cfg,
        "dataset_path": str(root.resolve()),
        "holdout": [[str(data.paths[i].resolve()), int(data.labels[i])] for i in hold_idx],
    }
    handle = ModelHandle(net, "toy-cnn", num_classes, shape, mean.tolist(), std.tolist(),
                         data.class_names, metadata)
    save_toy_model(handle, out)
    return handle


def save_toy_model(handle: ModelHandle, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    torch.save(handle.module.state_dict(), tmp)
    os.replace(tmp, path)
    meta = dict(handle.metadata, weight_hash=handle.weight_hash)
    write_json(path.with_suffix(".json"), meta)
    handle.metadata = meta
    handle.metadata["weights_path"] = str(path)


def _load_toy(path) -> ModelHandle:
    path = Path(path)
    if path.is_dir():
        path = path / "toy-cnn.pt"
    sidecar = path.with_suffix(".json")
    if not path.exists() or not sidecar.exists():
        raise ModelLoadError(f"toy model weights or sidecar missing: {path}")
    try:
        meta = read_json(sidecar)
        net = ToyCNN(meta["num_classes"], meta.get("width", 16))
        net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    except (OSError, KeyError, RuntimeError, ValueError, EOFError, pickle.UnpicklingError) as e:
        raise ModelLoadError(f"cannot load toy model {path}: {e}") from e
    meta["weights_path"] = str(path)
    return ModelHandle(net, "toy-cnn", meta["num_classes"], meta["input_shape"],
                       meta["mean"], meta["std"], meta["class_names"], meta)


def _torchvision_net(spec, pretrained):
    import torchvision

    if spec == "resnet18-imagenet":
        return torchvision.models.resnet18(num_classes=1000)
    # torchvision GoogLeNet weights carry aux heads and expect transform_input
    return torchvision.models.googlenet(num_classes=1000, aux_logits=pretrained,
                                        transform_input=pretrained, init_weights=False)


def load_model(spec, weights_path=None, allow_random_init=False, seed=0) -> ModelHandle:
    """Load a built-in architecture or a saved toy model.

    Pretrained variants read a torchvision state dict from ``weights_path``
    or from ``$PROTOGEN_WEIGHTS_DIR/<spec>.pth``. ``allow_random_init``
    builds the bare architecture instead (useful for layer inspection).
    """
    spec = str(spec)
    if spec not in BUILTIN_SPECS:
        p = Path(spec)
        if p.suffix == ".pt" or p.is_dir():
            return _load_toy(p)
        raise ConfigurationError(f"unknown model spec {spec!r}; expected one of {BUILTIN_SPECS} "
                                 "or a saved toy model path")

    if spec == "toy-cnn":
        if weights_path:
            return _load_toy(weights_path)
        if not allow_random_init:
            raise ConfigurationError("toy-cnn needs a trained weights path (see train-toy)")
        torch.manual_seed(seed)
        return ModelHandle(ToyCNN(), "toy-cnn", 10, (3, 32, 32), (0.5,) * 3, (0.25,) * 3,
                           metadata={"seed": seed})

    if weights_path is None and os.environ.get(WEIGHTS_ENV):
        candidate = Path(os.environ[WEIGHTS_ENV]) / f"{spec}.pth"
        weights_path = candidate
    pretrained = weights_path is not None
    if not pretrained and not allow_random_init:
        raise ConfigurationError(f"{spec} requires a local weights file "
                                 f"(pass weights_path or set {WEIGHTS_ENV})")
    net = _torchvision_net(spec, pretrained)
    if pretrained:
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except (OSError, RuntimeError, ValueError, EOFError, pickle.UnpicklingError) as e:
            raise ModelLoadError(f"cannot load weights {weights_path}: {e}") from e
        if spec == "inceptionv1-imagenet":
            net.aux_logits = False
            net.aux1 = net.aux2 = None
    names = _imagenet_class_names()
    return ModelHandle(net, spec, 1000, (3, 224, 224), IMAGENET_MEAN, IMAGENET_STD, names,
                       {"weights_path": str(weights_path) if pretrained else None})


def _imagenet_class_names():
    try:
        from torchvision.models import ResNet18_Weights

        return list(ResNet18_Weights.IMAGENET1K_V1.meta["categories"])
    except Exception:  # noqa: BLE001 - the static table is optional
        return None
