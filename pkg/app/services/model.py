# app/services/model.py
# Small CNN classifier: [conv -> channel_norm -> relu] x stages -> global avg pool
# -> (optional hidden dense + relu) -> dense -> softmax.

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List

import numpy as np

from app.core.exceptions import ConfigError, DimensionError
from app.schemas.model import ModelConfig
from app.services.autodiff import (
    Tensor,
    channel_norm,
    conv2d_forward,
    dense_forward,
    global_avg_pool,
    no_grad,
    relu,
    softmax,
)

logger = logging.getLogger("sslb.model")

NORM_MOMENTUM = 0.1


@dataclass
class ModelParams:
    """Trainable tensors (insertion-ordered) plus non-trainable running statistics."""

    config: ModelConfig
    tensors: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, t in self.tensors.items():
            yield name, t.data
        for name, arr in self.buffers.items():
            yield name, arr

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def clone(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            tensors={name: Tensor(t.data, requires_grad=True, name=name) for name, t in self.tensors.items()},
            buffers={name: arr.copy() for name, arr in self.buffers.items()},
        )


def model_init(config: ModelConfig, seed: int) -> ModelParams:
    sizes = config.spatial_sizes()
    if any(s < 1 for s in sizes):
        raise ConfigError(
            f"input_size={config.input_size} with stages {config.conv_stages} gives spatial sizes {sizes}"
        )
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    buffers: Dict[str, np.ndarray] = {}

    in_channels = config.channels
    for idx, (out_channels, kernel, _) in enumerate(config.conv_stages):
        fan_in = in_channels * kernel * kernel
        tensors[f"conv{idx}.kernel"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel, kernel)),
            requires_grad=True,
        )
        tensors[f"conv{idx}.scale"] = Tensor(np.ones(out_channels), requires_grad=True)
        tensors[f"conv{idx}.shift"] = Tensor(np.zeros(out_channels), requires_grad=True)
        if config.running_stats:
            buffers[f"conv{idx}.running_mean"] = np.zeros(out_channels)
            buffers[f"conv{idx}.running_var"] = np.ones(out_channels)
        in_channels = out_channels

    features = in_channels
    if config.hidden_units:
        tensors["hidden.W"] = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / features), size=(features, config.hidden_units)), requires_grad=True
        )
        tensors["hidden.b"] = Tensor(np.zeros(config.hidden_units), requires_grad=True)
        features = config.hidden_units
    tensors["out.W"] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / features), size=(features, config.num_classes)), requires_grad=True
    )
    tensors["out.b"] = Tensor(np.zeros(config.num_classes), requires_grad=True)

    for name, t in tensors.items():
        t.name = name
    params = ModelParams(config=config, tensors=tensors, buffers=buffers)
    logger.debug("Initialized model seed=%s parameters=%s", seed, params.num_parameters)
    return params


def _update_running_stats(params: ModelParams, idx: int, h: np.ndarray) -> None:
    mean = h.mean(axis=(0, 2, 3))
    var = h.var(axis=(0, 2, 3))
    key = f"conv{idx}"
    params.buffers[f"{key}.running_mean"] = (1 - NORM_MOMENTUM) * params.buffers[f"{key}.running_mean"] + NORM_MOMENTUM * mean
    params.buffers[f"{key}.running_var"] = (1 - NORM_MOMENTUM) * params.buffers[f"{key}.running_var"] + NORM_MOMENTUM * var


def model_forward(params: ModelParams, x, training: bool = False) -> Tensor:
    """Class probabilities [batch, C] for images [batch, 3, s, s].

    training=True refreshes the running statistics from the batch before normalizing;
    otherwise they are frozen and the forward pass is a pure function of (params, x).
    """
    config = params.config
    h = x if isinstance(x, Tensor) else Tensor(x, copy=False)
    expected = (config.channels, config.input_size, config.input_size)
    if h.data.ndim != 4 or h.shape[1:] != expected:
        raise DimensionError(f"model_forward expects [batch, {expected[0]}, {expected[1]}, {expected[2]}], got {h.shape}")

    for idx, (_, kernel, stride) in enumerate(config.conv_stages):
        h = conv2d_forward(h, params.tensors[f"conv{idx}.kernel"], stride=stride, padding=kernel // 2)
        mean = var = None
        if config.running_stats:
            if training:
                _update_running_stats(params, idx, h.data)
            mean = params.buffers[f"conv{idx}.running_mean"]
            var = params.buffers[f"conv{idx}.running_var"]
        h = channel_norm(h, params.tensors[f"conv{idx}.scale"], params.tensors[f"conv{idx}.shift"], mean, var)
        h = relu(h)

    h = global_avg_pool(h)
    if config.hidden_units:
        h = relu(dense_forward(h, params.tensors["hidden.W"], params.tensors["hidden.b"]))
    return softmax(dense_forward(h, params.tensors["out.W"], params.tensors["out.b"]))


def predict(params: ModelParams, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Frozen-statistics probabilities without recording gradients."""
    rows = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            rows.append(model_forward(params, images[start:start + batch_size]).data)
    if not rows:
        return np.zeros((0, params.config.num_classes))
    return np.concatenate(rows, axis=0)


def accuracy(params: ModelParams, images: np.ndarray, labels: np.ndarray) -> float:
    if len(images) == 0:
        return 0.0
    predicted = predict(params, images).argmax(axis=1)
    return float((predicted == np.asarray(labels)).mean())


# -- Checkpoints --------------------------------------------------------------
# Line 1: "name:d0xd1;name2:d0<TAB>{model config json}", then float64 little-endian values in header order.

def save_checkpoint(params: ModelParams, path: Path) -> None:
    path = Path(path)
    arrays = list(params.named_arrays())
    layout = ";".join(f"{name}:{'x'.join(str(d) for d in arr.shape)}" for name, arr in arrays)
    header = f"{layout}\t{params.config.model_dump_json()}\n"
    with path.open("wb") as fh:
        fh.write(header.encode("utf-8"))
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    logger.info("Saved checkpoint %s (%s arrays)", path, len(arrays))


def load_checkpoint(path: Path) -> ModelParams:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    layout, config_json = raw[:newline].decode("utf-8").split("\t", 1)
    config = ModelConfig(**json.loads(config_json))
    values = np.frombuffer(raw[newline + 1:], dtype="<f8")

    params = model_init(config, seed=0)
    offset = 0
    for item in layout.split(";"):
        name, dims = item.rsplit(":", 1)
        shape = tuple(int(d) for d in dims.split("x")) if dims else ()
        count = int(np.prod(shape)) if shape else 1
        arr = values[offset:offset + count].reshape(shape).astype(np.float64)
        offset += count
        if name in params.tensors:
            params.tensors[name].data = arr
        else:
            params.buffers[name] = arr
    if offset != values.size:
        raise DimensionError(f"checkpoint {path} has {values.size} values, header describes {offset}")
    return params
