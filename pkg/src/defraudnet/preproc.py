"""Gray + LBP + Gabor channel assembly and geometric augmentation."""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ConfigError, FormatError

IMAGE_SIZE = 224
CACHE_MAGIC = b"DFN3CH01"


@dataclass
class LbpConfig:
    neighbors: int = 8
    radius: int = 1
    # "nearest" snaps off-grid neighbours to pixels, which keeps the codes exactly
    # invariant under monotone intensity maps; "bilinear" interpolates them
    interpolation: str = "nearest"

    def validate(self):
        if self.neighbors != 8:
            raise ConfigError("only P = 8 neighbours are supported")
        if self.radius < 1:
            raise ConfigError("radius must be >= 1")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ConfigError(f"unknown interpolation {self.interpolation!r}")


@dataclass
class GaborConfig:
    kernel_size: int = 51
    theta: float = math.radians(11.55)
    sigma: float = 8.0
    lambd: float = 16.0
    gamma: float = 0.5
    psi: float = 0.0

    def validate(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd and >= 3")
        if self.sigma <= 0 or self.lambd <= 0:
            raise ConfigError("sigma and lambda must be positive")


@dataclass
class AugmentConfig:
    target_size: int = IMAGE_SIZE
    rotation_deg: float = 10.0
    translate: float = 0.05
    scale_min: float = 0.9
    scale_max: float = 1.1
    crop_pad: float = 0.1

    @classmethod
    def identity(cls, target_size: int = IMAGE_SIZE) -> "AugmentConfig":
        return cls(target_size, 0.0, 0.0, 1.0, 1.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- LBP

def _uniform_lookup(p: int) -> np.ndarray:
    codes = np.empty(1 << p, dtype=np.uint8)
    for pattern in range(1 << p):
        bits = [(pattern >> i) & 1 for i in range(p)]
        transitions = sum(bits[i] != bits[(i + 1) % p] for i in range(p))
        codes[pattern] = sum(bits) if transitions <= 2 else p + 1
    return codes


_RIU2 = {8: _uniform_lookup(8)}


def lbp_codes(img: np.ndarray, cfg: LbpConfig | None = None) -> np.ndarray:
    """Rotation-invariant uniform codes in ``0..P+1``; pixels within ``R`` of the border get ``P+1``."""
    cfg = cfg or LbpConfig()
    cfg.validate()
    p, r = cfg.neighbors, cfg.radius
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h <= 2 * r or w <= 2 * r:
        raise ConfigError(f"image {h}x{w} too small for LBP radius {r}")
    center = img[r:h - r, r:w - r]
    pattern = np.zeros(center.shape, dtype=np.int32)
    for i in range(p):
        dy = -r * math.sin(2 * math.pi * i / p)
        dx = r * math.cos(2 * math.pi * i / p)
        if cfg.interpolation == "nearest":
            sample = _shifted(img, r, int(round(dy)), int(round(dx)))
        else:
            sample = _bilinear_neighbor(img, r, dy, dx)
        pattern |= (sample >= center).astype(np.int32) << i
    out = np.full((h, w), p + 1, dtype=np.uint8)
    out[r:h - r, r:w - r] = _RIU2[p][pattern]
    return out


def _shifted(img, r, dy, dx):
    h, w = img.shape
    return img[r + dy:h - r + dy, r + dx:w - r + dx]


def _bilinear_neighbor(img, r, dy, dx):
    y0, x0 = math.floor(dy), math.floor(dx)
    ty, tx = dy - y0, dx - x0
    # snap tiny offsets so on-grid neighbours stay exact
    if abs(ty) < 1e-12:
        ty = 0.0
    if abs(tx) < 1e-12:
        tx = 0.0
    if abs(ty - 1) < 1e-12:
        y0, ty = y0 + 1, 0.0
    if abs(tx - 1) < 1e-12:
        x0, tx = x0 + 1, 0.0
    a = _shifted(img, r, y0, x0)
    if ty == 0 and tx == 0:
        return a
    b = _shifted(img, r, y0, x0 + 1) if tx else a
    c = _shifted(img, r, y0 + 1, x0) if ty else a
    d = _shifted(img, r, y0 + 1, x0 + 1) if tx and ty else (b if tx else c)
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d)


def compute_lbp_riu2(img: np.ndarray, cfg: LbpConfig | None = None) -> np.ndarray:
    """LBP code plane scaled to [0, 1] by ``1 / (P + 1)``."""
    cfg = cfg or LbpConfig()
    return lbp_codes(img, cfg).astype(np.float64) / (cfg.neighbors + 1)


def lbp_histogram(codes: np.ndarray, p: int = 8) -> np.ndarray:
    return np.bincount(codes.reshape(-1), minlength=p + 2)


# ---------------------------------------------------------------- Gabor

def gabor_kernel(cfg: GaborConfig | None = None) -> np.ndarray:
    cfg = cfg or GaborConfig()
    cfg.validate()
    half = cfg.kernel_size // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    xr = x * math.cos(cfg.theta) + y * math.sin(cfg.theta)
    yr = -x * math.sin(cfg.theta) + y * math.cos(cfg.theta)
    envelope = np.exp(-(xr**2 + cfg.gamma**2 * yr**2) / (2 * cfg.sigma**2))
    return envelope * np.cos(2 * math.pi * xr / cfg.lambd + cfg.psi)


def gabor_response(plane: np.ndarray, cfg: GaborConfig | None = None) -> np.ndarray:
    """Same-size correlation with the Gabor kernel under reflect padding (edge not repeated)."""
    kern = gabor_kernel(cfg)
    half = kern.shape[0] // 2
    padded = np.pad(np.asarray(plane, dtype=np.float64), half, mode="reflect")
    return signal.fftconvolve(padded, kern[::-1, ::-1], mode="valid")


def rescale_unit(resp: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Affine map of ``resp`` onto [0, 1]; a (numerically) constant response maps to 0.5."""
    lo, hi = float(resp.min()), float(resp.max())
    if hi - lo <= rtol * max(1.0, abs(hi), abs(lo)):
        return np.full(resp.shape, 0.5)
    return (resp - lo) / (hi - lo)


def gabor_filter(plane: np.ndarray, cfg: GaborConfig | None = None) -> np.ndarray:
    return rescale_unit(gabor_response(plane, cfg))


# ---------------------------------------------------------------- assembly

def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an 8-bit image, rounded back to uint8."""
    img = np.asarray(img)
    h, w = img.shape
    if (h, w) == (size, size):
        return img.astype(np.uint8, copy=True)
    src = img.astype(np.float64)

    def axis_weights(n_in):
        pos = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    r0, r1, ty = axis_weights(h)
    c0, c1, tx = axis_weights(w)
    top = src[r0][:, c0] + (src[r0][:, c1] - src[r0][:, c0]) * tx
    bot = src[r1][:, c0] + (src[r1][:, c1] - src[r1][:, c0]) * tx
    out = top + (bot - top) * ty[:, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def assemble_channels(
    img: np.ndarray,
    lbp_cfg: LbpConfig | None = None,
    gabor_cfg: GaborConfig | None = None,
    size: int = IMAGE_SIZE,
) -> np.ndarray:
    """Resize to ``size`` first, then stack gray/255, LBP and Gabor planes as float32."""
    g = resize_bilinear(img, size)
    gray = g.astype(np.float64) / 255.0
    lbp = compute_lbp_riu2(g, lbp_cfg)
    gab = gabor_filter(gray, gabor_cfg)
    return np.stack([gray, lbp, gab]).astype(np.float32)


# ---------------------------------------------------------------- augmentation

def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rotation/scale/translation on a padded canvas, then a random crop.

    The same transform is applied to every plane.
    """
    s = cfg.target_size
    if img.shape[1:] != (s, s):
        raise ConfigError(f"augment expects {s}x{s} planes, got {img.shape[1:]}")
    angle = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    scale = rng.uniform(cfg.scale_min, cfg.scale_max)
    tx, ty = rng.uniform(-cfg.translate, cfg.translate, size=2) * s
    pad = int(round(cfg.crop_pad * s))
    oy, ox = rng.integers(0, 2 * pad + 1, size=2)
    canvas = np.zeros((img.shape[0], s + 2 * pad, s + 2 * pad), dtype=np.float64)
    canvas[:, pad:pad + s, pad:pad + s] = img
    if angle != 0 or scale != 1 or tx != 0 or ty != 0:
        # output->input mapping about the canvas centre
        c = (s + 2 * pad - 1) / 2.0
        cos, sin = math.cos(angle), math.sin(angle)
        inv = np.array([[cos, sin], [-sin, cos]]) / scale
        offset = np.array([c, c]) - inv @ np.array([c + ty, c + tx])
        canvas = np.stack([
            ndimage.affine_transform(plane, inv, offset=offset, order=1, mode="constant", cval=0.0)
            for plane in canvas
        ])
    out = canvas[:, oy:oy + s, ox:ox + s]
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


# ---------------------------------------------------------------- cache blob

def write_cache(path, img: np.ndarray):
    img = np.asarray(img, dtype="<f4")
    c, h, w = img.shape
    if c != 3:
        raise ValueError("cache blobs hold exactly three planes")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<HHI", h, w, 0))
        fh.write(img.tobytes())


def read_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16 or buf[:8] != CACHE_MAGIC:
        raise FormatError(f"{path}: not a channel cache blob")
    h, w, _ = struct.unpack("<HHI", buf[8:16])
    n = 3 * h * w * 4
    if len(buf) != 16 + n:
        raise FormatError(f"{path}: expected {n} payload bytes, found {len(buf) - 16}")
    return np.frombuffer(buf[16:], dtype="<f4").reshape(3, h, w).astype(np.float32)
