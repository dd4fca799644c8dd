"""8-bit grayscale image decode/encode: binary PGM (P5) natively, PNG via Pillow."""

from __future__ import annotations

import io
import os

import numpy as np

from .errors import IngestionError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _pgm_tokens(buf: bytes, count: int, pos: int):
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("header ended early")
        tokens.append(buf[start:pos])
    return tokens, pos


def decode_pgm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        raise ValueError("not a binary PGM (missing P5 magic)")
    (w, h, maxval), pos = _pgm_tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if w <= 0 or h <= 0:
        raise ValueError(f"bad dimensions {w}x{h}")
    if not 0 < maxval <= 255:
        raise ValueError(f"only 8-bit PGM is supported (maxval {maxval})")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ValueError("missing whitespace after header")
    pos += 1
    data = buf[pos:pos + w * h]
    if len(data) < w * h:
        raise ValueError(f"truncated pixel data ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("PGM encoding needs a 2-D uint8 array")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def luma_bt601(rgb: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma, rounded: (299 R + 587 G + 114 B + 500) // 1000."""
    rgb = rgb.astype(np.uint32)
    y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return y.astype(np.uint8)


def decode_png(buf: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(buf)) as im:
        im.load()
        mode = im.mode
        if mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            mode = im.mode
        arr = np.asarray(im)
    if mode == "L":
        return arr.astype(np.uint8)
    if mode == "LA":
        return arr[..., 0].astype(np.uint8)
    if mode in ("RGB", "RGBA"):
        return luma_bt601(arr[..., :3])
    raise ValueError(f"unsupported PNG mode {mode!r} (need 8-bit gray or 24-bit colour)")


def encode_png(pixels: np.ndarray) -> bytes:
    from PIL import Image

    out = io.BytesIO()
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(out, format="PNG")
    return out.getvalue()


def load_image(path, min_side: int = 1) -> np.ndarray:
    """Decode an 8-bit grayscale image; colour PNGs are reduced to BT.601 luma."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IngestionError(path, exc.strerror or str(exc)) from exc
    try:
        if buf[:2] == b"P5":
            img = decode_pgm(buf)
        elif buf[:8] == PNG_MAGIC:
            img = decode_png(buf)
        else:
            raise ValueError("unsupported format (expected binary PGM or PNG)")
    except IngestionError:
        raise
    except Exception as exc:  # decoder errors of any kind
        raise IngestionError(path, str(exc)) from exc
    if min(img.shape) < min_side:
        raise IngestionError(path, f"image {img.shape[1]}x{img.shape[0]} smaller than {min_side} pixels")
    return img


def save_image(path, pixels: np.ndarray):
    ext = os.path.splitext(str(path))[1].lower()
    data = encode_png(pixels) if ext == ".png" else encode_pgm(pixels)
    with open(path, "wb") as fh:
        fh.write(data)
