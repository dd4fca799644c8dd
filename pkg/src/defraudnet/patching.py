"""Regular-grid overlapping patch extraction."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class PatchGridConfig:
    patch_size: int = 56
    stride: int = 42
    edge_policy: str = "clamp"

    def validate(self, side: int | None = None):
        if self.patch_size <= 0 or self.stride <= 0:
            raise ConfigError("patch_size and stride must be positive")
        if self.stride > 2 * self.patch_size:
            raise ConfigError("stride may not exceed twice the patch size")
        if side is not None and self.patch_size > side:
            raise ConfigError(f"patch_size {self.patch_size} exceeds image side {side}")
        if self.edge_policy != "clamp":
            raise ConfigError(f"unsupported edge policy {self.edge_policy!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PatchSet:
    patches: np.ndarray  # n×C×p×p
    positions: list[tuple[int, int]]

    @property
    def n(self) -> int:
        return len(self.positions)


def patch_positions(image_side: int, cfg: PatchGridConfig) -> list[int]:
    """Anchors 0, s, 2s, ... plus a final anchor flush with the far edge."""
    cfg.validate(image_side)
    last = image_side - cfg.patch_size
    anchors = list(range(0, last + 1, cfg.stride))
    if anchors[-1] != last:
        anchors.append(last)
    return anchors


def patch_count(image_side: int, cfg: PatchGridConfig) -> int:
    return len(patch_positions(image_side, cfg)) ** 2


def extract_patches(img: np.ndarray, cfg: PatchGridConfig) -> PatchSet:
    """Copy every grid patch out of a ``C×S×S`` image in row-major scan order."""
    if img.ndim != 3 or img.shape[1] != img.shape[2]:
        raise ShapeError(f"expected a square C×S×S image, got {img.shape}")
    anchors = patch_positions(img.shape[1], cfg)
    p = cfg.patch_size
    positions = [(r, c) for r in anchors for c in anchors]
    patches = np.stack([img[:, r:r + p, c:c + p] for r, c in positions])
    return PatchSet(patches=patches, positions=positions)
