"""Joint end-to-end training with Nesterov SGD, plus the binary checkpoint format."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, FormatError, StateError, TrainingDiverged
from .model import DeFraudNetConfig, DeFraudNetModel, FAKE, LIVE
from .preproc import AugmentConfig, augment
from .tensor import ParamStore, backward

log = logging.getLogger(__name__)

CKPT_MAGIC = b"DFNCKPT1"
CKPT_VERSION = 1
DTYPE_F32 = 0
DTYPE_U8 = 1  # raw bytes, used for the JSON config / metadata records


@dataclass
class TrainConfig:
    lr: float = 0.006
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 1e-4
    epochs: int = 500
    fingerprints_per_step: int = 1
    seed: int = 0
    shuffle: bool = True
    augment: bool = False

    def validate(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0 or self.fingerprints_per_step < 1:
            raise ConfigError("epochs must be >= 0 and fingerprints_per_step >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore) -> "OptimizerState":
        return cls({name: np.zeros_like(t.data) for name, t in params.items()})


def sgd_nesterov_step(params: ParamStore, state: OptimizerState, cfg: TrainConfig, lr: float | None = None):
    """In-place update of every trainable parameter.

    ``g' = g + wd*w`` (decayed weights only); ``v = mu*v + g'``;
    ``w -= lr*(g' + mu*v)`` with Nesterov, ``w -= lr*v`` without.
    """
    lr = cfg.lr if lr is None else lr
    mu = cfg.momentum
    for name, t in params.items():
        if t.grad is None:
            raise StateError(f"parameter {name!r} has no gradient; run backward first")
        g = t.grad
        if cfg.weight_decay and params.decays(name):
            g = g + cfg.weight_decay * t.data
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(t.data)
        v *= mu
        v += g
        step = g + mu * v if cfg.nesterov else v
        t.data -= (lr * step).astype(t.dtype)


@dataclass
class TrainResult:
    model: DeFraudNetModel
    state: OptimizerState
    log: list[dict]
    rng_state: dict


def _check_dataset(dataset):
    if not dataset:
        raise ConfigError("training dataset is empty")
    labels = {int(lbl) for _, lbl in dataset}
    if labels != {LIVE, FAKE}:
        raise ConfigError(f"training needs both live and fake samples, found labels {sorted(labels)}")


def sample_loss(model: DeFraudNetModel, image: np.ndarray, label: int):
    """Forward one fingerprint (whole image + its patches); returns ``(loss, logits)``."""
    losses, outs = group_loss(model, [image], [label])
    return losses[0], outs[0]


def group_loss(model: DeFraudNetModel, images: Sequence[np.ndarray], labels: Sequence[int]):
    """Per-fingerprint losses and logits from one joint train-mode forward."""
    losses, outs = [], []
    for (out, aux, _), label in zip(model.logits_batch(images, mode="train"), labels):
        loss = ops.softmax_cross_entropy(out, int(label))
        for a in aux:
            loss = ops.add(loss, ops.softmax_cross_entropy(a, int(label)))
        losses.append(loss)
        outs.append(out)
    return losses, outs


def train_ace(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    live = labels == LIVE
    fake = ~live
    err_live = 100.0 * np.mean(preds[live] != LIVE) if live.any() else 0.0
    err_fake = 100.0 * np.mean(preds[fake] != FAKE) if fake.any() else 0.0
    return float((err_live + err_fake) / 2)


def train(
    model: DeFraudNetModel,
    dataset: Sequence[tuple[np.ndarray, int]],
    cfg: TrainConfig,
    callbacks: Sequence[Callable[[dict], object]] = (),
    state: OptimizerState | None = None,
    lr_schedule: Callable[[int], float] | None = None,
    stop_when: Callable[[dict], bool] | None = None,
) -> TrainResult:
    """Train on ``(3×224×224 image, label)`` pairs, one optimizer step per group
    of ``fingerprints_per_step`` fingerprints. A group is one joint forward, so
    its norm statistics span every image (and every patch) in it.

    Each callback receives the epoch record ``{epoch, loss, train_ace}``;
    ``stop_when`` returning True ends training after that epoch.
    """
    cfg.validate()
    _check_dataset(dataset)
    rng = np.random.default_rng(cfg.seed)
    state = state or OptimizerState.for_params(model.params)
    aug_cfg = AugmentConfig(target_size=model.config.image_size)
    history = []
    step = 0
    k = cfg.fingerprints_per_step
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch) if lr_schedule else cfg.lr
        order = rng.permutation(len(dataset)) if cfg.shuffle else np.arange(len(dataset))
        losses, preds, labels = [], [], []
        for start in range(0, len(order), k):
            group = order[start:start + k]
            model.params.zero_grad()
            images = [dataset[i][0] for i in group]
            if cfg.augment:
                images = [augment(im, aug_cfg, rng) for im in images]
            group_labels = [int(dataset[i][1]) for i in group]
            group_losses, outs = group_loss(model, images, group_labels)
            for idx, loss in zip(group, group_losses):
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step} (sample {int(idx)})")
                losses.append(value)
            total = group_losses[0]
            for loss in group_losses[1:]:
                total = ops.add(total, loss)
            backward(ops.mul(total, 1.0 / len(group)) if len(group) > 1 else total)
            preds.extend(int(np.argmax(o.data)) for o in outs)
            labels.extend(group_labels)
            sgd_nesterov_step(model.params, state, cfg, lr=lr)
            step += 1
        record = {"epoch": epoch, "loss": float(np.mean(losses)), "train_ace": train_ace(preds, labels)}
        history.append(record)
        log.info("epoch %d loss %.5f train_ace %.2f", epoch, record["loss"], record["train_ace"])
        for cb in callbacks:
            cb(record)
        if stop_when is not None and stop_when(record):
            break
    return TrainResult(model, state, history, rng.bit_generator.state)


def write_epoch_log(records: Sequence[dict], path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({"epoch": r["epoch"], "loss": r["loss"], "train_ace": r["train_ace"]}) + "\n")


# ---------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    model: DeFraudNetModel
    state: OptimizerState
    epoch: int
    rng_state: dict | None
    meta: dict

    @property
    def config(self) -> DeFraudNetConfig:
        return self.model.config


def _record(name: str, dtype_code: int, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", dtype_code, arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    data = arr.astype("<f4").tobytes() if dtype_code == DTYPE_F32 else arr.astype(np.uint8).tobytes()
    return head + data


def _json_bytes(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def checkpoint_bytes(
    model: DeFraudNetModel,
    state: OptimizerState | None = None,
    epoch: int = 0,
    rng_state: dict | None = None,
    meta: dict | None = None,
) -> bytes:
    parts = [_record("__config__", DTYPE_U8, _json_bytes(model.config.to_dict()))]
    parts.append(_record("__meta__", DTYPE_U8, _json_bytes({"epoch": epoch, "rng_state": rng_state, **(meta or {})})))
    for name, t in model.params.items():
        parts.append(_record(f"param/{name}", DTYPE_F32, t.data))
    for name, b in model.params.buffer_items():
        parts.append(_record(f"buffer/{name}", DTYPE_F32, b))
    if state is not None:
        for name in sorted(state.velocity):
            parts.append(_record(f"velocity/{name}", DTYPE_F32, state.velocity[name]))
    payload = b"".join(parts)
    body = CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(payload)) + payload
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, model, state=None, epoch=0, rng_state=None, meta=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, state, epoch, rng_state, meta))


def _parse_records(payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    n = len(payload)
    try:
        while pos < n:
            (ln,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + ln].decode("utf-8")
            pos += ln
            code, rank = struct.unpack_from("<BB", payload, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if code == DTYPE_F32:
                size = 4 * count
                arr = np.frombuffer(payload[pos:pos + size], dtype="<f4").astype(np.float32).reshape(dims)
            elif code == DTYPE_U8:
                size = count
                arr = np.frombuffer(payload[pos:pos + size], dtype=np.uint8).reshape(dims)
            else:
                raise FormatError(f"unknown dtype code {code} in record {name!r}")
            if arr.size != count or pos + size > n:
                raise FormatError(f"record {name!r} is truncated")
            pos += size
            out[name] = arr
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint payload: {exc}") from exc
    return out


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_checkpoint(buf, str(path))


def parse_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(buf) < 20 or buf[:8] != CKPT_MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version, plen = struct.unpack_from("<IQ", buf, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    if len(buf) != 20 + plen + 32:
        raise FormatError(f"{source}: truncated or padded checkpoint ({len(buf)} bytes, expected {20 + plen + 32})")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{source}: checksum mismatch")
    records = _parse_records(body[20:])
    try:
        cfg = DeFraudNetConfig.from_dict(json.loads(records["__config__"].tobytes()))
        meta = json.loads(records["__meta__"].tobytes())
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: missing or invalid config record") from exc
    store = ParamStore()
    ref = _reference_params(cfg)
    stored = {name[len("param/"):] for name in records if name.startswith("param/")}
    if stored != set(ref):
        missing, extra = sorted(set(ref) - stored), sorted(stored - set(ref))
        raise FormatError(f"{source}: parameter set does not match config (missing {missing[:3]}, extra {extra[:3]})")
    for key in sorted(stored):
        arr = records["param/" + key]
        if arr.shape != ref[key].shape:
            raise FormatError(f"{source}: parameter {key!r} has shape {arr.shape}, config expects {ref[key].shape}")
        store.add(key, arr.copy(), decay=ref.decays(key))
    for name in sorted(records):
        if name.startswith("buffer/"):
            store.add_buffer(name[len("buffer/"):], records[name].copy())
    velocity = {name[len("velocity/"):]: records[name].copy() for name in records if name.startswith("velocity/")}
    model = DeFraudNetModel(cfg, store)
    epoch = int(meta.pop("epoch", 0))
    rng_state = meta.pop("rng_state", None)
    return Checkpoint(model, OptimizerState(velocity), epoch, rng_state, meta)


def _reference_params(cfg: DeFraudNetConfig) -> ParamStore:
    from .model import build_model

    return build_model(cfg, 0).params
