"""Four-channel fish classifier: architecture, inference, checkpoints.

Layer stack for a 100x100x4 input (shape after each stage)::

    conv 5x5x4x32 valid    96x96x32
    act, pool 5/5          19x19x32   (floor: the 96th row/column is dropped)
    conv 5x5x32x64 valid   15x15x64
    act, pool 5/5          3x3x64
    conv 5x5x64x32 same    3x3x32     (same padding: a valid 5x5 conv cannot fit 3x3)
    act, flatten           288
    dense 288->512, act, dropout keep 0.8
    dense 512->K, softmax
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CheckpointVersionError,
    InvalidParameterError,
    InvalidShapeError,
)

INPUT_SHAPE = (100, 100, 4)
# The classifier head starts at a tenth of the He range so an untrained
# network outputs near-uniform probabilities.
HEAD_INIT_SCALE = 0.1
MAGIC = b"FNET"
FORMAT_VERSION = 1


@dataclass
class ArchitectureSpec:
    num_classes: int
    activation: str = "relu"
    hidden_units: int = 512
    keep_prob: float = 0.8
    seed: int = 0
    class_names: list[str] = field(default_factory=list)
    input_shape: tuple[int, int, int] = INPUT_SHAPE


class Network:
    """Ordered layer stack with a softmax read-out."""

    def __init__(self, layers: list[nn.Layer], spec: ArchitectureSpec):
        self.layers = layers
        self.spec = spec
        self.shape_trace = self._trace()

    def _trace(self) -> list[tuple[str, tuple[int, ...]]]:
        shape = tuple(self.spec.input_shape)
        trace = [("input", shape)]
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except InvalidShapeError as e:
                raise InvalidShapeError(f"layer {i} ({layer.kind}): {e}") from None
            trace.append((layer.kind, shape))
        if shape != (self.spec.num_classes,):
            raise InvalidShapeError(f"final layer width {shape} != num_classes {self.spec.num_classes}")
        return trace

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Logits for a batch (N, 100, 100, 4)."""
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g: np.ndarray) -> None:
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise InvalidShapeError(f"expected samples of shape {self.spec.input_shape}, got {x.shape[1:]}")
        out = [nn.softmax(self.forward(x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    @property
    def dtype(self):
        return self.layers[0].params["w"].dtype

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in layer.params]

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def describe(self) -> dict:
        d = asdict(self.spec)
        d["input_shape"] = list(self.spec.input_shape)
        d["layers"] = [
            dict(layer.describe(), shape=list(shape)) for layer, (_, shape) in zip(self.layers, self.shape_trace[1:])
        ]
        return d


def build_fishnet(
    num_classes: int,
    activation: str = "relu",
    seed: int = 0,
    hidden_units: int = 512,
    keep_prob: float = 0.8,
    class_names: list[str] | None = None,
    dtype=np.float32,
) -> Network:
    if num_classes < 2:
        raise InvalidParameterError(f"num_classes must be >= 2, got {num_classes}")
    if activation not in nn.ACTIVATIONS:
        raise InvalidParameterError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    c = INPUT_SHAPE[2]
    layers = [
        nn.Conv2D(c, 32, 5, "valid", rng, dtype, need_input_grad=False),
        nn.Activation(activation),
        nn.MaxPool2D(5),
        nn.Conv2D(32, 64, 5, "valid", rng, dtype),
        nn.Activation(activation),
        nn.MaxPool2D(5),
        nn.Conv2D(64, 32, 5, "same", rng, dtype),
        nn.Activation(activation),
        nn.Flatten(),
        nn.Dense(3 * 3 * 32, hidden_units, rng, dtype),
        nn.Activation(activation),
        nn.Dropout(keep_prob, seed),
        nn.Dense(hidden_units, num_classes, rng, dtype),
    ]
    layers[-1].params["w"] *= dtype(HEAD_INIT_SCALE)
    spec = ArchitectureSpec(
        num_classes=num_classes,
        activation=activation,
        hidden_units=hidden_units,
        keep_prob=keep_prob,
        seed=seed,
        class_names=list(class_names or [str(i) for i in range(num_classes)]),
    )
    return Network(layers, spec)


def predict(network: Network, sample: np.ndarray) -> tuple[int, np.ndarray]:
    """Class index (smallest on ties) and probability vector for one sample."""
    sample = np.asarray(sample)
    if sample.shape != tuple(network.spec.input_shape):
        raise InvalidShapeError(f"expected sample shape {network.spec.input_shape}, got {sample.shape}")
    probs = network.predict_proba(sample[None])[0]
    return int(np.argmax(probs)), probs


# -- checkpoints -------------------------------------------------------------
#
# Layout (little-endian):
#   "FNET" | u32 version | u32 n | n bytes UTF-8 JSON architecture
#   | u32 tensor count | per tensor: u32 ndim, ndim x u32 extents, float32 data
#   | u32 CRC32 of everything before it


def checkpoint_bytes(network: Network) -> bytes:
    desc = json.dumps(network.describe(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(desc)), desc]
    params = network.parameters()
    parts.append(struct.pack("<I", len(params)))
    for _, p in params:
        parts.append(struct.pack(f"<I{p.ndim}I", p.ndim, *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(network: Network, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(network))


def _spec_from_desc(desc: dict) -> ArchitectureSpec:
    return ArchitectureSpec(
        num_classes=desc["num_classes"],
        activation=desc["activation"],
        hidden_units=desc["hidden_units"],
        keep_prob=desc["keep_prob"],
        seed=desc["seed"],
        class_names=list(desc["class_names"]),
        input_shape=tuple(desc["input_shape"]),
    )


def checkpoint_from_bytes(data: bytes) -> Network:
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint: bad magic")
    if len(data) < 8:
        raise CheckpointCorruptionError("checkpoint truncated")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if len(data) < 16 or zlib.crc32(data[:-4]) != struct.unpack_from("<I", data, len(data) - 4)[0]:
        raise CheckpointCorruptionError("checkpoint CRC mismatch")

    body = memoryview(data)[:-4]
    try:
        (n,) = struct.unpack_from("<I", body, 8)
        off = 12
        desc = json.loads(bytes(body[off : off + n]).decode("utf-8"))
        off += n
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tensors = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", body, off)
            shape = struct.unpack_from(f"<{ndim}I", body, off + 4)
            off += 4 + 4 * ndim
            nbytes = 4 * int(np.prod(shape))
            if off + nbytes > len(body):
                raise CheckpointCorruptionError("tensor data shorter than its shape header")
            tensors.append(np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape))
            off += nbytes
        if off != len(body):
            raise CheckpointCorruptionError("trailing bytes after tensor data")
        spec = _spec_from_desc(desc)
    except (struct.error, ValueError, KeyError) as e:
        raise CheckpointCorruptionError(f"malformed checkpoint: {e}") from None

    net = build_fishnet(
        spec.num_classes, spec.activation, spec.seed, spec.hidden_units, spec.keep_prob, spec.class_names
    )
    params = net.parameters()
    if len(params) != len(tensors):
        raise CheckpointCorruptionError(f"expected {len(params)} tensors, found {len(tensors)}")
    for (name, p), t in zip(params, tensors):
        if p.shape != t.shape:
            raise CheckpointCorruptionError(f"tensor {name}: shape {t.shape} != expected {p.shape}")
        p[...] = t
    return net


def load_checkpoint(path) -> Network:
    return checkpoint_from_bytes(Path(path).read_bytes())
