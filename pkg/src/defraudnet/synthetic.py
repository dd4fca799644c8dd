"""Fingerprint-like ridge textures with a live/fake separability knob.

Live samples are oriented sinusoidal ridges under a smooth random
orientation field plus pore-like speckle.  Fake samples come from the same
random draws, then lose texture in proportion to ``delta``: the ridges are
blurred, the speckle is damped and a block-averaged copy is blended in.  At
``delta = 0`` both classes are the same generator.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .imageio import save_image

# per-material weights on (ridge blur, speckle damping, blockiness)
MATERIAL_MIX = {
    "gelatin": (1.0, 1.0, 0.5),
    "latex": (0.5, 1.0, 1.0),
    "woodglue": (0.8, 0.8, 0.8),
    "playdoh": (1.0, 0.9, 1.0),
}
DEFAULT_MATERIALS = ("gelatin", "latex")


@dataclass
class SynthConfig:
    count: int = 10
    side: int = 224
    freq_range: tuple[float, float] = (20.0, 30.0)
    smoothness: float = 1.5  # cycles/image of the orientation field
    delta: float = 1.0
    seed: int = 0
    speckle_std: float = 18.0
    ridge_amplitude: float = 70.0

    def validate(self):
        if not 0 <= self.delta <= 1:
            raise ConfigError("delta must lie in [0, 1]")
        if self.count < 1:
            raise ConfigError("count must be >= 1")
        if self.side < 64 or self.side % 4:
            raise ConfigError("side must be >= 64 and a multiple of 4 (block size)")
        lo, hi = self.freq_range
        if not 0 < lo <= hi:
            raise ConfigError("freq_range must be positive and ordered")


def generate_sample(
    cfg: SynthConfig,
    cls: str,
    rng: np.random.Generator,
    freq_range: tuple[float, float] | None = None,
    material: str | None = None,
    amplitude: float | None = None,
) -> np.ndarray:
    """One ``side×side`` uint8 image of class ``"live"`` or ``"fake"``."""
    if cls not in ("live", "fake"):
        raise ValueError(f"class must be 'live' or 'fake', got {cls!r}")
    s = cfg.side
    lo, hi = freq_range or cfg.freq_range
    amp = cfg.ridge_amplitude if amplitude is None else amplitude
    # every random draw happens before any class-specific processing
    freq = rng.uniform(lo, hi)
    theta0 = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    waves = rng.normal(0, 1, size=(3, 2)) * cfg.smoothness
    wphase = rng.uniform(0, 2 * np.pi, size=3)
    wamp = rng.uniform(0.15, 0.35, size=3)
    speckle = rng.normal(0, 1, size=(s, s))
    background = rng.uniform(110, 145)

    y, x = np.mgrid[0:s, 0:s] / s
    theta = theta0 + sum(
        a * np.sin(2 * np.pi * (u * x + v * y) + p) for a, (u, v), p in zip(wamp, waves, wphase)
    )
    ridge = np.cos(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)
    noise_scale = cfg.speckle_std
    block_w = 0.0
    if cls == "fake" and cfg.delta > 0:
        blur_w, damp_w, blk_w = MATERIAL_MIX[material or DEFAULT_MATERIALS[0]]
        ridge = ndimage.gaussian_filter(ridge, sigma=1.5 * cfg.delta * blur_w, mode="reflect")
        noise_scale *= 1 - 0.75 * cfg.delta * damp_w
        block_w = 0.5 * cfg.delta * blk_w
    img = background + amp * ridge + noise_scale * speckle
    if block_w:
        b = 4
        blocks = img.reshape(s // b, b, s // b, b).mean(axis=(1, 3))
        img = (1 - block_w) * img + block_w * np.kron(blocks, np.ones((b, b)))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def sensor_band(cfg: SynthConfig, index: int, count: int) -> tuple[float, float]:
    lo, hi = cfg.freq_range
    width = (hi - lo) / count
    return lo + index * width, lo + (index + 1) * width


def generate_dataset(
    cfg: SynthConfig,
    out_dir,
    sensors=("synA",),
    materials=DEFAULT_MATERIALS[:1],
    years=("2015",),
    splits=("train",),
) -> list[dict]:
    """Write PGM files plus ``manifest.jsonl``; ``cfg.count`` images per class for
    every (year, sensor, split), fakes spread round-robin over ``materials``."""
    cfg.validate()
    for m in materials:
        if m not in MATERIAL_MIX:
            raise ConfigError(f"unknown material {m!r}; choose from {sorted(MATERIAL_MIX)}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for yi, year in enumerate(years):
        amp = cfg.ridge_amplitude * (1.0 - 0.12 * yi)
        for si, sensor in enumerate(sensors):
            band = sensor_band(cfg, si, len(sensors))
            for pi, split in enumerate(splits):
                for ci, cls in enumerate(("live", "fake")):
                    for i in range(cfg.count):
                        material = "live" if cls == "live" else materials[i % len(materials)]
                        rng = np.random.default_rng([cfg.seed, yi, si, pi, ci, i])
                        img = generate_sample(cfg, cls, rng, band, None if cls == "live" else material, amp)
                        name = f"{year}_{sensor}_{split}_{cls}_{material}_{i:04d}.pgm"
                        path = os.path.join(out_dir, name)
                        save_image(path, img)
                        entries.append({
                            "path": name, "label": cls, "sensor": sensor,
                            "material": material, "year": year, "split": split,
                        })
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    return entries


def high_pass_energy(img: np.ndarray) -> float:
    """Mean squared Laplacian response; a crude texture-detail statistic."""
    return float(np.mean(ndimage.laplace(img.astype(np.float64)) ** 2))
