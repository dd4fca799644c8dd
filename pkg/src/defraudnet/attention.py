"""Channel, spatial and patch attention over per-patch feature maps.

All blocks take batched maps ``n×C×H×W`` where ``n`` indexes patches.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import ParamStore, Tensor


@dataclass
class AttentionConfig:
    channel_reduction: int = 8
    patch_reduction: int = 4
    spatial_kernel: int = 7
    patch_mode: str = "cross"  # cross | shared
    shared_hidden: int = 4

    def validate(self, channels: int, n_patches: int):
        if self.spatial_kernel % 2 == 0 or self.spatial_kernel < 1:
            raise ConfigError("spatial_kernel must be a positive odd integer")
        if not 1 <= self.channel_reduction <= channels:
            raise ConfigError(f"channel_reduction {self.channel_reduction} must lie in [1, {channels}]")
        if not 1 <= self.patch_reduction <= n_patches:
            raise ConfigError(f"patch_reduction {self.patch_reduction} must lie in [1, {n_patches}]")
        if self.patch_mode not in ("cross", "shared"):
            raise ConfigError(f"unknown patch_mode {self.patch_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _mlp_params(store, name, rng, sizes):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / a)
        store.add(f"{name}.fc{i + 1}.weight", (rng.standard_normal((b, a)) * std).astype(np.float32), decay=True)
        store.add(f"{name}.fc{i + 1}.bias", np.zeros(b, np.float32))


def _mlp(store, name, x):
    h = ops.relu(ops.fully_connected(x, store[f"{name}.fc1.weight"], store[f"{name}.fc1.bias"]))
    return ops.fully_connected(h, store[f"{name}.fc2.weight"], store[f"{name}.fc2.bias"])


def channel_hidden(channels: int, cfg: AttentionConfig) -> int:
    return math.ceil(channels / cfg.channel_reduction)


def patch_hidden(n: int, cfg: AttentionConfig) -> int:
    return math.ceil(n / cfg.patch_reduction)


def init_params(store: ParamStore, prefix: str, channels: int, n_patches: int, cfg: AttentionConfig, rng):
    cfg.validate(channels, n_patches)
    _mlp_params(store, f"{prefix}.channel", rng, [channels, channel_hidden(channels, cfg), channels])
    k = cfg.spatial_kernel
    store.add(
        f"{prefix}.spatial.conv.weight",
        (rng.standard_normal((1, 2, k, k)) * np.sqrt(2.0 / (2 * k * k))).astype(np.float32),
        decay=True,
    )
    store.add(f"{prefix}.spatial.conv.bias", np.zeros(1, np.float32))
    if cfg.patch_mode == "cross":
        _mlp_params(store, f"{prefix}.patch", rng, [n_patches, patch_hidden(n_patches, cfg), n_patches])
    else:
        _mlp_params(store, f"{prefix}.patch", rng, [1, cfg.shared_hidden, 1])


def param_count(channels: int, n_patches: int, cfg: AttentionConfig) -> int:
    ch = channel_hidden(channels, cfg)
    total = channels * ch + ch + ch * channels + channels
    total += 2 * cfg.spatial_kernel**2 + 1
    if cfg.patch_mode == "cross":
        ph = patch_hidden(n_patches, cfg)
        total += n_patches * ph + ph + ph * n_patches + n_patches
    else:
        total += 3 * cfg.shared_hidden + 1
    return total


def zero_init(store: ParamStore, prefix: str):
    """Zero every attention weight and bias (all gates then output exactly 0.5)."""
    for name in store.names(prefix + "."):
        store[name].data[...] = 0


# ---------------------------------------------------------------- blocks

def channel_attention(fmap: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """Per-channel gates in (0, 1): ``n×C×H×W -> n×C`` (or ``C×H×W -> C``)."""
    c = fmap.shape[-3]
    w1 = store[f"{prefix}.channel.fc1.weight"]
    if w1.shape[1] != c:
        raise ShapeError(f"channel attention expects {w1.shape[1]} channels, got {c}")
    f_avg = ops.reduce_spatial(fmap, "avg")
    f_max = ops.reduce_spatial(fmap, "max")
    return ops.sigmoid(ops.add(_mlp(store, f"{prefix}.channel", f_avg), _mlp(store, f"{prefix}.channel", f_max)))


def apply_channel(fmap: Tensor, weights: Tensor) -> Tensor:
    if weights.shape != fmap.shape[:-2]:
        raise ShapeError(f"channel weights {weights.shape} do not match feature map {fmap.shape}")
    return ops.mul(fmap, ops.reshape(weights, weights.shape + (1, 1)))


def spatial_attention(fmap: Tensor, store: ParamStore, prefix: str) -> Tensor:
    """Spatial gate map in (0, 1) with the input's spatial extent: ``n×1×H×W``."""
    both = ops.concat([ops.reduce_channels(fmap, "avg"), ops.reduce_channels(fmap, "max")], axis=-3)
    w = store[f"{prefix}.spatial.conv.weight"]
    pad = w.shape[-1] // 2
    return ops.sigmoid(ops.conv2d(both, w, store[f"{prefix}.spatial.conv.bias"], stride=1, padding=pad))


def apply_spatial(fmap: Tensor, smap: Tensor) -> Tensor:
    if smap.shape[-2:] != fmap.shape[-2:]:
        raise ShapeError(f"spatial map {smap.shape} does not match feature map {fmap.shape}")
    return ops.mul(fmap, smap)


def patch_descriptor(attended: Tensor) -> tuple[Tensor, Tensor]:
    """Spatial mean per patch and channel (``n×C``), then channel mean (``n``)."""
    if attended.ndim != 4:
        raise ShapeError(f"patch descriptor expects n×C×H×W, got {attended.shape}")
    m_s = ops.reduce_spatial(attended, "avg")
    m_c = ops.mean(m_s, axis=1)
    return m_s, m_c


def patch_attention(m_c: Tensor, store: ParamStore, prefix: str, cfg: AttentionConfig) -> Tensor:
    """One sigmoid weight per patch from the length-n descriptor."""
    if m_c.ndim != 1:
        raise ShapeError(f"patch attention expects a 1-D descriptor, got {m_c.shape}")
    n = m_c.shape[0]
    if cfg.patch_mode == "cross":
        expected = store[f"{prefix}.patch.fc1.weight"].shape[1]
        if n != expected:
            raise ShapeError(f"patch attention built for {expected} patches, got {n}")
        return ops.sigmoid(_mlp(store, f"{prefix}.patch", m_c))
    col = ops.reshape(m_c, (n, 1))
    return ops.sigmoid(ops.reshape(_mlp(store, f"{prefix}.patch", col), (n,)))


def attend_patches(fmaps: Tensor, store: ParamStore, prefix: str, cfg: AttentionConfig):
    """Channel gate, then spatial gate on the channel-gated maps, then patch weights.

    Returns ``(attended maps, patch weights, channel gates, spatial maps)``.
    """
    cw = channel_attention(fmaps, store, prefix)
    fc = apply_channel(fmaps, cw)
    sm = spatial_attention(fc, store, prefix)
    fs = apply_spatial(fc, sm)
    _, m_c = patch_descriptor(fs)
    pw = patch_attention(m_c, store, prefix, cfg)
    return fs, pw, cw, sm
