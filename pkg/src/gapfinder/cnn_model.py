"""The small reference CNN: construction, prediction, SGD training, weight files.

Architecture (fixed)::

    conv 8x3x3 pad 1 -> relu -> maxpool 2 -> conv 16x3x3 pad 1 -> relu
    -> maxpool 2 -> flatten -> linear 64 -> relu -> linear K

Weight file layout (``.wcgf``, all integers unsigned 32-bit little endian)::

    b"WCGF" | version | input_side | layer count
    per layer:
        kind tag (1 byte) | stride | padding | pool_size
        kernel rank | kernel dims... | bias rank | bias dims...
        kernel float32 LE payload | bias float32 LE payload
    class count | per class: byte length | UTF-8 name

Layers without parameters store rank 0 for both tensors.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor_engine as te
from .rng import MASK64, XorShift64Star

log = logging.getLogger(__name__)

MAGIC = b"WCGF"
VERSION = 1
KIND_TAGS = {"conv2d": 1, "relu": 2, "maxpool2d": 3, "flatten": 4, "linear": 5}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}
DEFAULT_CLASS_NAMES = ("vehicle", "sign")


class WeightFileError(ValueError):
    """Base class for unreadable weight files."""


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ShapeInconsistencyError(WeightFileError):
    pass


@dataclass(eq=False)
class ModelWeights:
    layers: list[te.LayerParams]
    class_names: tuple[str, ...]
    input_side: int

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if not self.class_names or any(not n for n in self.class_names):
            raise ValueError("class names must be non-empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"class names must be unique: {self.class_names}")
        (k,) = te.check_pipeline(self.layers, (3, self.input_side, self.input_side))
        if k != len(self.class_names):
            raise ValueError(f"model emits {k} logits but has {len(self.class_names)} class names")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def parameter_count(self) -> int:
        return sum(l.kernel.size + l.bias.size for l in self.layers if l.has_params)

    def flat_parameters(self) -> np.ndarray:
        parts = [a.ravel() for l in self.layers if l.has_params for a in (l.kernel, l.bias)]
        return np.concatenate(parts) if parts else np.zeros(0, np.float32)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.05
    batch_size: int = 16
    seed: int = 7

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        # 0 is accepted: it is the identity update
        if not 0.0 <= self.learning_rate < 1.0:
            raise ValueError(f"learning_rate must be in [0, 1), got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def _glorot(rng: XorShift64Star, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    values = [rng.uniform(-bound, bound) for _ in range(math.prod(shape))]
    return np.array(values, dtype=np.float32).reshape(shape)


def reference_layers(num_classes: int, input_side: int, seed: int) -> list[te.LayerParams]:
    """Reference architecture for any side that survives two 2x pools.

    Weights are drawn in layer order from one generator; biases start at 0.
    """
    rng = XorShift64Star(seed)
    flat = 16 * (input_side // 2 // 2) ** 2

    def conv(out_ch, in_ch):
        k = _glorot(rng, (out_ch, in_ch, 3, 3), in_ch * 9, out_ch * 9)
        return te.LayerParams("conv2d", k, np.zeros(out_ch, np.float32), stride=1, padding=1)

    def dense(out_n, in_n):
        k = _glorot(rng, (out_n, in_n), in_n, out_n)
        return te.LayerParams("linear", k, np.zeros(out_n, np.float32))

    return [
        conv(8, 3),
        te.LayerParams("relu"),
        te.LayerParams("maxpool2d", pool_size=2, stride=2),
        conv(16, 8),
        te.LayerParams("relu"),
        te.LayerParams("maxpool2d", pool_size=2, stride=2),
        te.LayerParams("flatten"),
        dense(64, flat),
        te.LayerParams("relu"),
        dense(num_classes, 64),
    ]


def build_model(num_classes: int, input_side: int, seed: int, class_names=None) -> ModelWeights:
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    if input_side < 16:
        raise ValueError(f"input_side must be at least 16, got {input_side}")
    if class_names is None:
        if num_classes == len(DEFAULT_CLASS_NAMES):
            class_names = DEFAULT_CLASS_NAMES
        else:
            class_names = tuple(f"class_{i}" for i in range(num_classes))
    return ModelWeights(reference_layers(num_classes, input_side, seed), class_names, input_side)


def image_to_chw(model: ModelWeights, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    want = (model.input_side, model.input_side, 3)
    if image.shape != want:
        raise te.ShapeError(f"image shape {image.shape} does not match model input {want}")
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def logits(model: ModelWeights, image: np.ndarray) -> np.ndarray:
    out, _ = te.forward(model.layers, image_to_chw(model, image))
    return out


def predict(model: ModelWeights, image: np.ndarray) -> np.ndarray:
    """Class probabilities for an H x W x 3 image."""
    _, probs = te.softmax_cross_entropy(logits(model, image), 0)
    return probs


def evaluate(model: ModelWeights, images, labels) -> float:
    """Top-1 accuracy."""
    hits = sum(int(np.argmax(predict(model, img)) == int(y)) for img, y in zip(images, labels))
    return hits / len(labels)


def copy_model(model: ModelWeights) -> ModelWeights:
    layers = [
        te.LayerParams(
            l.kind,
            None if l.kernel is None else l.kernel.copy(),
            None if l.bias is None else l.bias.copy(),
            l.stride,
            l.padding,
            l.pool_size,
        )
        for l in model.layers
    ]
    return ModelWeights(layers, model.class_names, model.input_side)


def train(model: ModelWeights, dataset, cfg: TrainConfig) -> ModelWeights:
    """Plain minibatch SGD on mean softmax cross-entropy.

    ``dataset`` needs ``images`` (H x W x 3 each) and ``labels``. The input model
    is left untouched. Per-epoch shuffle order comes from ``cfg.seed``.
    """
    images, labels = dataset.images, dataset.labels
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if any(not 0 <= int(y) < model.num_classes for y in labels):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")

    model = copy_model(model)
    layers = model.layers
    chw = [image_to_chw(model, img) for img in images]
    rng = XorShift64Star(cfg.seed)
    lr = cfg.learning_rate
    trainable = [i for i, l in enumerate(layers) if l.has_params]

    for epoch in range(cfg.epochs):
        order = list(range(n))
        rng.shuffle(order)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            acc = {i: [np.zeros(layers[i].kernel.shape), np.zeros(layers[i].bias.shape)] for i in trainable}
            for j in batch:
                loss, _, _, grads = te.loss_and_grads(layers, chw[j], int(labels[j]))
                total_loss += loss
                for i in trainable:
                    acc[i][0] += grads[i][0]
                    acc[i][1] += grads[i][1]
            scale = lr / len(batch)
            for i in trainable:
                layer = layers[i]
                layer.kernel = (layer.kernel.astype(np.float64) - scale * acc[i][0]).astype(np.float32)
                layer.bias = (layer.bias.astype(np.float64) - scale * acc[i][1]).astype(np.float32)
        log.info("epoch %d/%d mean loss %.4f", epoch + 1, cfg.epochs, total_loss / n)
    return model


# ---------------------------------------------------------------- weight files


def _pack_shape(arr) -> bytes:
    if arr is None:
        return struct.pack("<I", 0)
    return struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)


def dumps_weights(model: ModelWeights) -> bytes:
    out = [MAGIC, struct.pack("<III", VERSION, model.input_side, len(model.layers))]
    for layer in model.layers:
        out.append(struct.pack("<BIII", KIND_TAGS[layer.kind], layer.stride, layer.padding, layer.pool_size))
        out.append(_pack_shape(layer.kernel))
        out.append(_pack_shape(layer.bias))
        for arr in (layer.kernel, layer.bias):
            if arr is not None:
                out.append(arr.astype("<f4").tobytes())
    out.append(struct.pack("<I", len(model.class_names)))
    for name in model.class_names:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def shape(self, what: str) -> tuple[int, ...] | None:
        rank = self.u32(f"{what} rank")
        if rank == 0:
            return None
        if rank > 8:
            raise ShapeInconsistencyError(f"{self.path}: implausible rank {rank} for {what}")
        return tuple(self.u32(f"{what} dims") for _ in range(rank))

    def tensor(self, shape, what: str) -> np.ndarray | None:
        if shape is None:
            return None
        n = math.prod(shape)
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)


def loads_weights(data: bytes, path="<bytes>") -> ModelWeights:
    r = _Reader(data, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version mismatch, file is v{version}, reader supports v{VERSION}")
    input_side = r.u32("input side")
    count = r.u32("layer count")
    layers = []
    for i in range(count):
        tag = r.take(1, f"layer {i} kind")[0]
        if tag not in TAG_KINDS:
            raise ShapeInconsistencyError(f"{path}: layer {i} has unknown kind tag {tag}")
        stride, padding, pool = (r.u32(f"layer {i} hyperparameters") for _ in range(3))
        kshape = r.shape(f"layer {i} kernel")
        bshape = r.shape(f"layer {i} bias")
        kernel = r.tensor(kshape, f"layer {i} kernel")
        bias = r.tensor(bshape, f"layer {i} bias")
        try:
            layers.append(te.LayerParams(TAG_KINDS[tag], kernel, bias, stride, padding, pool))
        except ValueError as exc:
            raise ShapeInconsistencyError(f"{path}: layer {i}: {exc}") from None
    names = []
    for i in range(r.u32("class count")):
        raw = r.take(r.u32(f"class {i} name length"), f"class {i} name")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError:
            raise ShapeInconsistencyError(f"{path}: class {i} name is not UTF-8") from None
    if r.pos != len(data):
        raise ShapeInconsistencyError(f"{path}: {len(data) - r.pos} trailing bytes")
    try:
        return ModelWeights(layers, tuple(names), input_side)
    except ValueError as exc:
        raise ShapeInconsistencyError(f"{path}: {exc}") from None


def save_weights(model: ModelWeights, path) -> None:
    path = Path(path)
    payload = dumps_weights(model)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path) -> ModelWeights:
    return loads_weights(Path(path).read_bytes(), path)
