"""Image decoding and encoding. Tensors are float32 (C, H, W) in [0, 1]."""

import io

import numpy as np
import torch
from PIL import Image

from .utils import atomic_write_bytes


def decode_image(path, input_shape) -> torch.Tensor:
    """Decode ``path``, resize the shorter side and center-crop to ``input_shape``."""
    channels, height, width = input_shape
    with Image.open(path) as im:
        im.load()
        im = im.convert("RGB" if channels == 3 else "L")
    scale = max(height / im.height, width / im.width)
    if (im.width, im.height) != (width, height):
        new_w = max(width, round(im.width * scale))
        new_h = max(height, round(im.height * scale))
        im = im.resize((new_w, new_h), Image.BILINEAR)
        left = (new_w - width) // 2
        top = (new_h - height) // 2
        im = im.crop((left, top, left + width, top + height))
    arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def to_uint8(image) -> np.ndarray:
    """(C, H, W) unit-interval tensor to (H, W, C) uint8 array."""
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def encode_png(image) -> bytes:
    arr = to_uint8(image)
    mode = "RGB" if arr.shape[2] == 3 else "L"
    im = Image.fromarray(arr if mode == "RGB" else arr[:, :, 0], mode=mode)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def save_png(image, path):
    atomic_write_bytes(path, encode_png(image))
