"""DenseNet feature extractors for the whole-image and patch towers."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import ParamStore, Tensor


@dataclass
class DenseNetConfig:
    depth: int
    growth_rate: int
    blocks: int = 3
    bottleneck: bool = False
    compression: float = 0.5
    stem_channels: int | None = None
    input_channels: int = 3
    input_size: int = 224
    stem_stride: int | None = None
    stem_pool: bool = False
    num_classes: int = 0

    @property
    def layers_per_block(self) -> int:
        per = self.blocks * (2 if self.bottleneck else 1)
        return (self.depth - 4) // per

    def validate(self):
        per = self.blocks * (2 if self.bottleneck else 1)
        if self.depth < 4 + per or (self.depth - 4) % per:
            kind = "bottleneck" if self.bottleneck else "plain"
            raise ConfigError(
                f"depth {self.depth} invalid for a {kind} DenseNet with {self.blocks} blocks: "
                f"(depth - 4) must be a positive multiple of {per}"
            )
        if self.growth_rate < 1:
            raise ConfigError("growth_rate must be positive")
        if not 0 < self.compression <= 1:
            raise ConfigError("compression must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # stem | dense | transition | norm | classifier
    name: str
    in_channels: int
    out_channels: int
    stride: int = 1
    bottleneck: bool = False
    pool: bool = False


@dataclass
class LayerPlan:
    config: DenseNetConfig
    layers: list[LayerSpec] = field(default_factory=list)

    @property
    def out_channels(self) -> int:
        feats = [l for l in self.layers if l.kind != "classifier"]
        return feats[-1].out_channels

    @property
    def input_size(self) -> int:
        return self.config.input_size

    def output_size(self) -> int:
        """Spatial side of the final feature map."""
        side = self.config.input_size
        for l in self.layers:
            if l.kind == "stem":
                side = (side + 2 - 3) // l.stride + 1
                if l.pool:
                    side //= 2
            elif l.kind == "transition":
                side //= 2
        return side


def plan_network(cfg: DenseNetConfig) -> LayerPlan:
    cfg.validate()
    k = cfg.growth_rate
    stem_out = cfg.stem_channels or 2 * k
    stride = cfg.stem_stride or (2 if cfg.input_size >= 112 else 1)
    plan = LayerPlan(cfg)
    plan.layers.append(LayerSpec("stem", "stem", cfg.input_channels, stem_out, stride=stride, pool=cfg.stem_pool))
    ch = stem_out
    for b in range(cfg.blocks):
        for i in range(cfg.layers_per_block):
            plan.layers.append(LayerSpec("dense", f"block{b + 1}.layer{i + 1}", ch, ch + k, bottleneck=cfg.bottleneck))
            ch += k
        if b < cfg.blocks - 1:
            out = int(np.floor(cfg.compression * ch))
            plan.layers.append(LayerSpec("transition", f"trans{b + 1}", ch, out))
            ch = out
    plan.layers.append(LayerSpec("norm", "final_norm", ch, ch))
    if cfg.num_classes:
        plan.layers.append(LayerSpec("classifier", "classifier", ch, cfg.num_classes))
    return plan


def _layer_param_count(l: LayerSpec, growth: int) -> int:
    if l.kind == "stem":
        return l.in_channels * l.out_channels * 9
    if l.kind == "dense":
        if l.bottleneck:
            inter = 4 * growth
            return 2 * l.in_channels + l.in_channels * inter + 2 * inter + inter * growth * 9
        return 2 * l.in_channels + l.in_channels * growth * 9
    if l.kind == "transition":
        return 2 * l.in_channels + l.in_channels * l.out_channels
    if l.kind == "norm":
        return 2 * l.in_channels
    if l.kind == "classifier":
        return l.in_channels * l.out_channels + l.out_channels
    raise ValueError(l.kind)


def param_count(plan: LayerPlan) -> int:
    """Exact number of trainable scalars (convs, norm affine, optional classifier)."""
    return sum(_layer_param_count(l, plan.config.growth_rate) for l in plan.layers)


def conv_param_count(in_ch: int, out_ch: int, kernel: int, bias: bool = True) -> int:
    return in_ch * out_ch * kernel * kernel + (out_ch if bias else 0)


# ---------------------------------------------------------------- parameters

def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def add_norm(store: ParamStore, name: str, ch: int):
    store.add(f"{name}.gamma", np.ones(ch, np.float32))
    store.add(f"{name}.beta", np.zeros(ch, np.float32))
    store.add_buffer(f"{name}.running_mean", np.zeros(ch, np.float32))
    store.add_buffer(f"{name}.running_var", np.ones(ch, np.float32))


def add_conv(store: ParamStore, name: str, rng, out_ch: int, in_ch: int, kernel: int):
    store.add(f"{name}.weight", he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel), decay=True)


def init_params(plan: LayerPlan, store: ParamStore, prefix: str, rng: np.random.Generator):
    k = plan.config.growth_rate
    for l in plan.layers:
        base = f"{prefix}.{l.name}"
        if l.kind == "stem":
            add_conv(store, f"{base}.conv", rng, l.out_channels, l.in_channels, 3)
        elif l.kind == "dense":
            add_norm(store, f"{base}.norm1", l.in_channels)
            if l.bottleneck:
                add_conv(store, f"{base}.conv1", rng, 4 * k, l.in_channels, 1)
                add_norm(store, f"{base}.norm2", 4 * k)
                add_conv(store, f"{base}.conv2", rng, k, 4 * k, 3)
            else:
                add_conv(store, f"{base}.conv1", rng, k, l.in_channels, 3)
        elif l.kind == "transition":
            add_norm(store, f"{base}.norm", l.in_channels)
            add_conv(store, f"{base}.conv", rng, l.out_channels, l.in_channels, 1)
        elif l.kind == "norm":
            add_norm(store, base, l.in_channels)
        elif l.kind == "classifier":
            store.add(f"{base}.weight", he_normal(rng, (l.out_channels, l.in_channels), l.in_channels), decay=True)
            store.add(f"{base}.bias", np.zeros(l.out_channels, np.float32))


# ---------------------------------------------------------------- forward

def norm(store: ParamStore, name: str, x: Tensor, mode: str, relu: bool = False) -> Tensor:
    rs = ops.RunningStats.__new__(ops.RunningStats)
    rs.mean = store.buffer(f"{name}.running_mean")
    rs.var = store.buffer(f"{name}.running_var")
    y = ops.batch_norm(x, store[f"{name}.gamma"], store[f"{name}.beta"], rs, mode, relu=relu)
    if mode == "train":
        store.set_buffer(f"{name}.running_mean", rs.mean)
        store.set_buffer(f"{name}.running_var", rs.var)
    return y


def _dense_layer(store, base, l: LayerSpec, x, mode):
    h = norm(store, f"{base}.norm1", x, mode, relu=True)
    if l.bottleneck:
        h = ops.conv2d(h, store[f"{base}.conv1.weight"])
        h = norm(store, f"{base}.norm2", h, mode, relu=True)
        return ops.conv2d(h, store[f"{base}.conv2.weight"], padding=1)
    return ops.conv2d(h, store[f"{base}.conv1.weight"], padding=1)


def forward_features(
    plan: LayerPlan,
    store: ParamStore,
    prefix: str,
    x: Tensor,
    mode: str = "train",
    skip_connection: tuple[str, int] | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the tower on an ``N×3×S×S`` (or ``3×S×S``) input.

    Returns the final normalized feature map (what attention consumes) and
    its global average pool.  ``skip_connection=(layer_name, i)`` zeroes the
    i-th concatenated input of that dense layer; it exists for ablation
    tests only.
    """
    batched = x.ndim == 4
    if not batched:
        x = ops.reshape(x, (1,) + x.shape)
    s = plan.input_size
    if x.shape[1:] != (plan.config.input_channels, s, s):
        raise ShapeError(f"{prefix}: expected input {plan.config.input_channels}×{s}×{s}, got {x.shape[1:]}")
    features: list[Tensor] = []
    for l in plan.layers:
        base = f"{prefix}.{l.name}"
        if l.kind == "stem":
            h = ops.conv2d(x, store[f"{base}.conv.weight"], stride=l.stride, padding=1)
            if l.pool:
                h = ops.pool2d(h, "max", 2, 2)
            features = [h]
        elif l.kind == "dense":
            inputs = features
            if skip_connection is not None and skip_connection[0] == l.name:
                inputs = list(features)
                inputs[skip_connection[1]] = ops.mul(inputs[skip_connection[1]], 0.0)
            features.append(_dense_layer(store, base, l, ops.concat(inputs, axis=1), mode))
        elif l.kind == "transition":
            h = ops.concat(features, axis=1)
            h = norm(store, f"{base}.norm", h, mode, relu=True)
            h = ops.conv2d(h, store[f"{base}.conv.weight"])
            features = [ops.pool2d(h, "avg", 2, 2)]
        elif l.kind == "norm":
            fmap = norm(store, base, ops.concat(features, axis=1), mode, relu=True)
    vec = ops.reduce_spatial(fmap, "avg")
    if not batched:
        fmap = ops.reshape(fmap, fmap.shape[1:])
        vec = ops.reshape(vec, vec.shape[1:])
    return fmap, vec
