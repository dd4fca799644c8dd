"""Whole-image tower + attended patch tower, fused by patch-weighted averaging."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import attention, densenet, ops
from .attention import AttentionConfig
from .densenet import DenseNetConfig
from .errors import ConfigError, ShapeError
from .patching import PatchGridConfig, extract_patches, patch_count
from .tensor import ParamStore, Tensor, no_grad

LIVE, FAKE = 0, 1
LABELS = ("live", "fake")


@dataclass
class DeFraudNetConfig:
    net1: DenseNetConfig = field(default_factory=lambda: DenseNetConfig(16, 12, input_size=224, stem_stride=2, stem_pool=True))
    net2: DenseNetConfig = field(default_factory=lambda: DenseNetConfig(10, 6, input_size=56, stem_stride=2))
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    patch_grid: PatchGridConfig = field(default_factory=lambda: PatchGridConfig(56, 84))
    fusion_hidden: int = 128
    aux_heads: bool = False
    image_size: int = 224
    zero_init_head: bool = False
    zero_init_attention: bool = False

    @property
    def n_patches(self) -> int:
        return patch_count(self.image_size, self.patch_grid)

    def validate(self):
        if self.net1.input_size != self.image_size:
            raise ConfigError(f"net1 input size {self.net1.input_size} != image size {self.image_size}")
        if self.net2.input_size != self.patch_grid.patch_size:
            raise ConfigError(f"net2 input size {self.net2.input_size} != patch size {self.patch_grid.patch_size}")
        if self.fusion_hidden < 1:
            raise ConfigError("fusion_hidden must be positive")
        self.patch_grid.validate(self.image_size)
        self.net1.validate()
        self.net2.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeFraudNetConfig":
        """Build from a (possibly partial) dict; nested sections merge onto the defaults."""
        d = dict(d)
        base = cls()
        kw = {}
        for key, typ in (("net1", DenseNetConfig), ("net2", DenseNetConfig),
                         ("attention", AttentionConfig), ("patch_grid", PatchGridConfig)):
            if key in d:
                sub = d.pop(key)
                unknown = set(sub) - set(typ.__dataclass_fields__)
                if unknown:
                    raise ConfigError(f"unknown {key} config fields: {sorted(unknown)}")
                kw[key] = typ(**{**asdict(getattr(base, key)), **sub})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**kw, **d)


def desk_config(**overrides) -> DeFraudNetConfig:
    """Small CPU-friendly configuration (DenseNet-16/k12 and DenseNet-10/k6, 9 patches)."""
    return DeFraudNetConfig(**overrides)


def full_config() -> DeFraudNetConfig:
    """DenseNet-BC-40/k48 whole-image tower, DenseNet-10/k6 patch tower, 25 patches."""
    return DeFraudNetConfig(
        net1=DenseNetConfig(40, 48, bottleneck=True, input_size=224, stem_stride=2, stem_pool=True),
        net2=DenseNetConfig(10, 6, input_size=56, stem_stride=2),
        patch_grid=PatchGridConfig(56, 42),
    )


@dataclass
class Prediction:
    logits: np.ndarray
    probability_fake: float
    patch_weights: np.ndarray
    label: str


class DeFraudNetModel:
    def __init__(self, config: DeFraudNetConfig, params: ParamStore):
        self.config = config
        self.params = params
        self.plan1 = densenet.plan_network(config.net1)
        self.plan2 = densenet.plan_network(config.net2)

    @property
    def n_patches(self) -> int:
        return self.config.n_patches

    def num_params(self) -> int:
        return self.params.num_params()

    def logits(self, image: np.ndarray, mode: str = "train"):
        """Build the graph for one ``3×224×224`` image.

        Returns ``(logits, aux_logits, patch_weights)``; ``aux_logits`` is empty
        unless the config enables auxiliary heads.
        """
        return self.logits_batch([image], mode)[0]

    def logits_batch(self, images, mode: str = "train") -> list:
        """Joint forward of several fingerprints: Network-1 sees the images as
        one batch and Network-2 sees all their patches as one batch, so
        train-mode norm statistics span the whole group. Attention and the
        head act per fingerprint.

        Returns one ``(logits, aux_logits, patch_weights)`` per image.
        """
        cfg = self.config
        s = cfg.image_size
        images = [np.asarray(im) for im in images]
        for im in images:
            if im.shape != (3, s, s):
                raise ShapeError(f"expected a 3×{s}×{s} image, got {im.shape}")
        p = self.params
        dtype = p.dtype
        k, n = len(images), cfg.n_patches
        x = Tensor(np.stack(images).astype(dtype, copy=False))
        _, g_all = densenet.forward_features(self.plan1, p, "net1", x, mode)
        patches = np.concatenate([extract_patches(im, cfg.patch_grid).patches for im in images])
        fmaps_all, _ = densenet.forward_features(self.plan2, p, "net2", Tensor(patches.astype(dtype, copy=False)), mode)
        results = []
        for i, fmaps in enumerate(ops.split(fmaps_all, [n] * k) if k > 1 else [fmaps_all]):
            g = ops.reshape(ops.take(g_all, 0, i, i + 1) if k > 1 else g_all, (g_all.shape[1],))
            attended, pw, _, _ = attention.attend_patches(fmaps, p, "attn", cfg.attention)
            pooled = ops.reduce_spatial(attended, "avg")
            fused = fuse_patches(pooled, pw)
            z = ops.concat([g, fused], axis=0)
            h = ops.relu(ops.fully_connected(z, p["head.fc1.weight"], p["head.fc1.bias"]))
            out = ops.fully_connected(h, p["head.fc2.weight"], p["head.fc2.bias"])
            aux = []
            if cfg.aux_heads:
                aux.append(ops.fully_connected(g, p["aux.global.weight"], p["aux.global.bias"]))
                aux.append(ops.fully_connected(fused, p["aux.patch.weight"], p["aux.patch.bias"]))
            results.append((out, aux, pw))
        return results

    def forward(self, image: np.ndarray) -> Prediction:
        with no_grad():
            out, _, pw = self.logits(image, mode="eval")
        return make_prediction(out.data, pw.data)

    def predict_batch(self, images) -> list:
        """Eval-mode predictions in input order.

        A failing image does not abort the batch: its slot holds the raised
        exception instead of a :class:`Prediction`.
        """
        results = []
        for img in images:
            try:
                results.append(self.forward(img))
            except Exception as exc:  # noqa: BLE001 - reported per index
                results.append(exc)
        return results


def fuse_patches(pooled: Tensor, weights: Tensor) -> Tensor:
    """Normalized weighted mean of per-patch vectors: ``sum(w_i p_i) / sum(w_i)``."""
    num = ops.sum(ops.mul(pooled, ops.reshape(weights, (weights.shape[0], 1))), axis=0)
    return ops.div(num, ops.sum(weights))


def make_prediction(logits: np.ndarray, patch_weights: np.ndarray) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64)
    prob = ops.softmax(logits)
    return Prediction(
        logits=np.asarray(logits),
        probability_fake=float(prob[FAKE]),
        patch_weights=np.asarray(patch_weights, dtype=np.float64),
        label=LABELS[int(np.argmax(logits))],
    )


def build_model(cfg: DeFraudNetConfig, seed: int = 0) -> DeFraudNetModel:
    cfg.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    plan1 = densenet.plan_network(cfg.net1)
    plan2 = densenet.plan_network(cfg.net2)
    densenet.init_params(plan1, store, "net1", rng)
    densenet.init_params(plan2, store, "net2", rng)
    attention.init_params(store, "attn", plan2.out_channels, cfg.n_patches, cfg.attention, rng)
    d_in = plan1.out_channels + plan2.out_channels
    hdim = cfg.fusion_hidden
    store.add("head.fc1.weight", densenet.he_normal(rng, (hdim, d_in), d_in), decay=True)
    store.add("head.fc1.bias", np.zeros(hdim, np.float32))
    store.add("head.fc2.weight", densenet.he_normal(rng, (2, hdim), hdim), decay=True)
    store.add("head.fc2.bias", np.zeros(2, np.float32))
    if cfg.aux_heads:
        for name, d in (("global", plan1.out_channels), ("patch", plan2.out_channels)):
            store.add(f"aux.{name}.weight", densenet.he_normal(rng, (2, d), d), decay=True)
            store.add(f"aux.{name}.bias", np.zeros(2, np.float32))
    if cfg.zero_init_head:
        store["head.fc2.weight"].data[...] = 0
    if cfg.zero_init_attention:
        attention.zero_init(store, "attn")
    return DeFraudNetModel(cfg, store)


def model_param_count(cfg: DeFraudNetConfig) -> int:
    """Analytic parameter total, computed from the configuration alone."""
    plan1 = densenet.plan_network(cfg.net1)
    plan2 = densenet.plan_network(cfg.net2)
    c1, c2 = plan1.out_channels, plan2.out_channels
    total = densenet.param_count(plan1) + densenet.param_count(plan2)
    total += attention.param_count(c2, cfg.n_patches, cfg.attention)
    h = cfg.fusion_hidden
    total += (c1 + c2) * h + h + h * 2 + 2
    if cfg.aux_heads:
        total += (c1 * 2 + 2) + (c2 * 2 + 2)
    return total


def submodule(name: str) -> str:
    """Coarse grouping of a parameter name (net1, net2, attn.channel, ..., head)."""
    parts = name.split(".")
    if parts[0] == "attn":
        return f"attn.{parts[1]}"
    return parts[0]
