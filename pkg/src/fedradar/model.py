"""Residual CNN with an explicit shared-base / private-head partition.

The network is a small ResNet-style classifier:

* stem: 7x7 conv (stride 1) -> ReLU
* four residual blocks, each ``conv3x3(stride 2) -> ReLU -> conv3x3``
  plus a shortcut, with ReLU after the sum; the shortcut is a 1x1
  stride-2 projection when the block changes channel count and a
  parameter-free 2x2 average pool when it does not
* global average pooling
* head: linear -> ReLU -> linear to two logits

With the default configuration (stem 16, blocks 32/64/128/128, head
128->128->2) the head holds exactly 16,770 parameters and the base
599,264, for 616,034 in total. Base and head parameter ids are kept in
disjoint sets so federated code can flatten, ship and reload the base
without ever touching the head.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import (
    Parameter,
    Role,
    Tensor,
    add,
    avg_pool_2x2,
    conv2d,
    global_avg_pool,
    linear,
    relu,
)

__all__ = [
    "ResidualCnnConfig",
    "PartitionedModel",
    "WeightVector",
    "build_model",
    "count_parameters",
    "flatten_params",
    "flatten_base",
    "load_weights",
    "load_base",
    "clone_model",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"FEDRADAR-CKPT-1\n"


@dataclass(frozen=True)
class ResidualCnnConfig:
    """Architecture hyperparameters for the partitioned residual CNN."""

    input_channels: int = 3
    input_size: tuple[int, int] = (64, 64)
    stem_channels: int = 16
    block_channels: tuple[int, int, int, int] = (32, 64, 128, 128)
    head_hidden: int = 128
    num_classes: int = 2
    stem_kernel: int = 7

    def validate(self) -> None:
        if len(self.block_channels) != 4:
            raise ValueError(f"block_channels must list exactly 4 stages, got {len(self.block_channels)}")
        if self.num_classes != 2:
            raise ValueError("the detector is a binary hypothesis test; num_classes must be 2")
        if any(c < 1 for c in self.block_channels) or self.stem_channels < 1 or self.head_hidden < 1:
            raise ValueError("channel counts must be positive")
        chain = (self.stem_channels,) + tuple(self.block_channels)
        if any(b < a for a, b in zip(chain, chain[1:])):
            raise ValueError(f"channel counts must be non-decreasing, got {chain}")
        if self.stem_kernel % 2 != 1:
            raise ValueError("stem_kernel must be odd")
        h, w = self.input_size
        if min(h, w) < 16:
            raise ValueError(
                f"input_size {self.input_size} too small for 4 downsampling stages (need at least 16x16)"
            )

    def block_has_projection(self, index: int) -> bool:
        cin = self.stem_channels if index == 0 else self.block_channels[index - 1]
        return cin != self.block_channels[index]


@dataclass
class WeightVector:
    """A flat float64 view of a subset of model parameters.

    ``layout`` lists ``(parameter id, offset, length)`` in model order;
    flatten/load round-trips are bit-exact.
    """

    values: np.ndarray
    layout: tuple[tuple[int, int, int], ...]

    def copy(self) -> "WeightVector":
        return WeightVector(self.values.copy(), self.layout)

    @property
    def num_params(self) -> int:
        return int(self.values.size)


@dataclass
class PartitionedModel:
    """Ordered parameter list plus the base/head id partition."""

    config: ResidualCnnConfig
    parameters: list[Parameter]
    base_ids: frozenset[int]
    head_ids: frozenset[int]
    seed: int

    def __post_init__(self):
        ids = [p.id for p in self.parameters]
        if len(set(ids)) != len(ids):
            raise ValueError("parameter ids must be unique")
        if self.base_ids & self.head_ids:
            raise ValueError("base and head id sets overlap")
        if self.base_ids | self.head_ids != set(ids):
            raise ValueError("base and head id sets must cover all parameters")

    def param_by_id(self, pid: int) -> Parameter:
        return self._by_id[pid]

    @property
    def _by_id(self) -> dict[int, Parameter]:
        return {p.id: p for p in self.parameters}

    def forward(self, x: Tensor) -> Tensor:
        """Run the classifier; input [N, C, H, W] -> logits [N, 2]."""
        cfg = self.config
        n, c, h, w = x.data.shape
        if (c, h, w) != (cfg.input_channels, *cfg.input_size):
            raise ValueError(
                f"input shape {(c, h, w)} does not match configured {(cfg.input_channels, *cfg.input_size)}"
            )
        params = iter(self.parameters)

        def nxt() -> Parameter:
            return next(params)

        out = relu(conv2d(x, nxt(), nxt(), stride=1, padding=cfg.stem_kernel // 2))
        for i in range(4):
            main = relu(conv2d(out, nxt(), nxt(), stride=2, padding=1))
            main = conv2d(main, nxt(), nxt(), stride=1, padding=1)
            if cfg.block_has_projection(i):
                short = conv2d(out, nxt(), nxt(), stride=2, padding=0)
            else:
                short = avg_pool_2x2(out)
            out = relu(add(main, short))
        feat = global_avg_pool(out)
        hidden = relu(linear(feat, nxt(), nxt()))
        return linear(hidden, nxt(), nxt())

    def predict_logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Forward a plain array of images in chunks; returns [N, 2] logits."""
        outs = []
        for start in range(0, images.shape[0], batch_size):
            outs.append(self.forward(Tensor(images[start : start + batch_size])).data)
        return np.concatenate(outs, axis=0)


def _init_conv(rng: np.random.Generator, k: int, c: int, kh: int, kw: int):
    # He-uniform: bound = sqrt(6 / fan_in), fan_in = c*kh*kw
    bound = np.sqrt(6.0 / (c * kh * kw))
    weight = rng.uniform(-bound, bound, size=(k, c, kh, kw))
    bias = np.zeros(k)
    return weight, bias


def _init_linear(rng: np.random.Generator, out_features: int, in_features: int):
    bound = 1.0 / np.sqrt(in_features)
    weight = rng.uniform(-bound, bound, size=(out_features, in_features))
    bias = rng.uniform(-bound, bound, size=out_features)
    return weight, bias


def build_model(config: ResidualCnnConfig, seed: int) -> PartitionedModel:
    """Construct and initialize the partitioned model, deterministically."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: list[Parameter] = []

    def register(arrays, role: Role):
        for a in arrays:
            params.append(Parameter(id=len(params), tensor=Tensor(a), role=role))

    register(_init_conv(rng, config.stem_channels, config.input_channels,
                        config.stem_kernel, config.stem_kernel), Role.BASE)
    cin = config.stem_channels
    for i, cout in enumerate(config.block_channels):
        register(_init_conv(rng, cout, cin, 3, 3), Role.BASE)
        register(_init_conv(rng, cout, cout, 3, 3), Role.BASE)
        if config.block_has_projection(i):
            register(_init_conv(rng, cout, cin, 1, 1), Role.BASE)
        cin = cout

    register(_init_linear(rng, config.head_hidden, cin), Role.HEAD)
    register(_init_linear(rng, config.num_classes, config.head_hidden), Role.HEAD)

    base_ids = frozenset(p.id for p in params if p.role == Role.BASE)
    head_ids = frozenset(p.id for p in params if p.role == Role.HEAD)
    return PartitionedModel(config=config, parameters=params,
                            base_ids=base_ids, head_ids=head_ids, seed=seed)


def count_parameters(model: PartitionedModel) -> tuple[int, int, int]:
    """Exact (total, base, head) parameter counts from tensor shapes."""
    base = sum(p.tensor.size for p in model.parameters if p.role == Role.BASE)
    head = sum(p.tensor.size for p in model.parameters if p.role == Role.HEAD)
    return base + head, base, head


def flatten_params(model: PartitionedModel, ids=None) -> WeightVector:
    """Flatten the selected parameters (all by default) in model order."""
    selected = model.parameters if ids is None else [p for p in model.parameters if p.id in ids]
    layout = []
    chunks = []
    offset = 0
    for p in selected:
        n = p.tensor.size
        layout.append((p.id, offset, n))
        chunks.append(p.tensor.data.reshape(-1))
        offset += n
    values = np.concatenate(chunks) if chunks else np.empty(0)
    return WeightVector(values=values, layout=tuple(layout))


def flatten_base(model: PartitionedModel) -> WeightVector:
    return flatten_params(model, model.base_ids)


def load_weights(model: PartitionedModel, wv: WeightVector) -> None:
    """Overwrite the parameters named in the vector's layout, bit-exactly."""
    by_id = {p.id: p for p in model.parameters}
    if wv.values.size != sum(length for _, _, length in wv.layout):
        raise ValueError("weight vector length does not match its layout")
    for pid, offset, length in wv.layout:
        if pid not in by_id:
            raise ValueError(f"layout names unknown parameter id {pid}")
        p = by_id[pid]
        if p.tensor.size != length:
            raise ValueError(
                f"layout length {length} for parameter {pid} does not match tensor size {p.tensor.size}"
            )
        p.tensor.data[...] = wv.values[offset : offset + length].reshape(p.tensor.data.shape)


def load_base(model: PartitionedModel, wv: WeightVector) -> None:
    """Load base weights only; the private head is never touched."""
    expected = tuple((pid, off, ln) for pid, off, ln in flatten_base(model).layout)
    if wv.layout != expected:
        raise ValueError(
            "weight vector layout does not match this model's base partition "
            f"(got {len(wv.layout)} entries, expected {len(expected)})"
        )
    load_weights(model, wv)


def clone_model(model: PartitionedModel) -> PartitionedModel:
    """Deep-copy a model; the clone shares nothing with the original."""
    params = [Parameter(id=p.id, tensor=Tensor(p.tensor.data.copy()), role=p.role)
              for p in model.parameters]
    return PartitionedModel(config=model.config, parameters=params,
                            base_ids=model.base_ids, head_ids=model.head_ids, seed=model.seed)


# ---------------------------------------------------------------------------
# Checkpoint file format
# ---------------------------------------------------------------------------
# magic | u32 header length | header JSON (utf-8) | payload
#
# The header records the config, a layout table (id, role, shape, offset,
# length) and the SHA-256 of the payload. The payload is every parameter
# in model order as little-endian float64.


def save_checkpoint(model: PartitionedModel, path) -> None:
    payload = flatten_params(model).values.astype("<f8").tobytes()
    header = {
        "format_version": 1,
        "config": asdict(model.config),
        "seed": model.seed,
        "layout": [
            {
                "id": p.id,
                "role": p.role.value,
                "shape": list(p.tensor.data.shape),
                "offset": off,
                "length": ln,
            }
            for p, (pid, off, ln) in zip(model.parameters, flatten_params(model).layout)
        ],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def load_checkpoint(path) -> PartitionedModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        payload = f.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: checkpoint payload checksum mismatch")

    cfg_dict = dict(header["config"])
    cfg_dict["input_size"] = tuple(cfg_dict["input_size"])
    cfg_dict["block_channels"] = tuple(cfg_dict["block_channels"])
    config = ResidualCnnConfig(**cfg_dict)
    model = build_model(config, seed=header["seed"])
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    layout = tuple((e["id"], e["offset"], e["length"]) for e in header["layout"])
    load_weights(model, WeightVector(values=values, layout=layout))
    return model
