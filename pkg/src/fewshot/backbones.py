"""Feature extractors mapping raw inputs to embedding vectors.

Three kinds at desk scale:
  identity  -- flat passthrough, zero parameters
  mlp       -- fully connected stack with rectifier nonlinearities
  conv      -- four conv3x3 + relu + maxpool2x2 blocks, then a linear head
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .optim import ParamSet


@dataclass
class BackboneConfig:
    kind: str = "mlp"                       # identity | mlp | conv
    input_shape: tuple = (2,)               # flat (d_in,) or image (H, W, C)
    hidden: tuple = (32,)                   # mlp hidden widths
    channels: tuple = (8, 8, 16, 16)        # conv block output channels
    embedding_dim: int = 64

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.channels = tuple(int(v) for v in self.channels)
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.kind == "identity":
            if len(self.input_shape) != 1:
                raise ConfigError("identity backbone requires a flat input shape")
            self.embedding_dim = self.input_shape[0]
        elif self.kind == "mlp":
            if len(self.input_shape) != 1:
                raise ConfigError("mlp backbone requires a flat input shape")
        elif self.kind == "conv":
            if len(self.input_shape) != 3:
                raise ConfigError("conv backbone requires an (H, W, C) input shape")
            h, w, _ = self.input_shape
            if h // (2 ** len(self.channels)) < 1 or w // (2 ** len(self.channels)) < 1:
                raise ConfigError("input too small for the configured conv blocks")
        else:
            raise ConfigError(f"unknown backbone kind {self.kind!r}")


class Backbone:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    @property
    def embedding_dim(self):
        return self.config.embedding_dim


def _fan_in_uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)


def build_backbone(config, seed):
    """Deterministic fan-in uniform initialization given the seed."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    if config.kind == "identity":
        return Backbone(config, params)

    if config.kind == "mlp":
        widths = [config.input_shape[0], *config.hidden, config.embedding_dim]
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            params.add(f"w{i}", _fan_in_uniform(rng, n_in, (n_in, n_out)))
            params.add(f"b{i}", _fan_in_uniform(rng, n_in, (n_out,)))
        return Backbone(config, params)

    # conv
    h, w, c = config.input_shape
    in_ch = c
    for i, out_ch in enumerate(config.channels):
        fan_in = in_ch * 9
        params.add(f"conv{i}_w", _fan_in_uniform(rng, fan_in, (out_ch, in_ch, 3, 3)))
        params.add(f"conv{i}_b", _fan_in_uniform(rng, fan_in, (out_ch,)))
        in_ch = out_ch
        h, w = h // 2, w // 2
    flat = in_ch * h * w
    params.add("head_w", _fan_in_uniform(rng, flat, (flat, config.embedding_dim)))
    params.add("head_b", _fan_in_uniform(rng, flat, (config.embedding_dim,)))
    return Backbone(config, params)


def embed(backbone, batch):
    """Map a batch (B x input_shape) to embeddings (B x d). Differentiable."""
    cfg = backbone.config
    x = batch if isinstance(batch, T.Tensor) else T.Tensor(batch)
    if x.data.shape[1:] != cfg.input_shape:
        raise ShapeError(f"batch shape {x.data.shape[1:]} != input shape {cfg.input_shape}")
    p = backbone.params

    if cfg.kind == "identity":
        return x

    if cfg.kind == "mlp":
        n_layers = len(cfg.hidden) + 1
        h = x
        for i in range(n_layers):
            h = T.add(T.matmul(h, p[f"w{i}"]), p[f"b{i}"])
            if i < n_layers - 1:
                h = T.relu(h)
        return h

    # conv: incoming images are (B, H, W, C); compute in (B, C, H, W)
    h = T.transpose(x, (0, 3, 1, 2))
    for i in range(len(cfg.channels)):
        h = T.maxpool2d(T.relu(T.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], padding=1)))
    b = h.data.shape[0]
    h = T.reshape(h, (b, -1))
    return T.add(T.matmul(h, p["head_w"]), p["head_b"])
