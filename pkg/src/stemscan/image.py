"""Grayscale image IO and basic manipulation.

Images are plain 2D float64 numpy arrays with nominal range [0, 1]. Binary
PGM (P5) is the canonical interchange format; 8/16-bit grayscale PNG is read
and written through Pillow.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _read_pgm(raw: bytes, path) -> tuple[np.ndarray, int]:
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ImageFormatError(f"{path}: malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if width == 0 or height == 0:
        raise ImageFormatError(f"{path}: zero-area image")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * dtype.itemsize
    body = raw[m.end():m.end() + n]
    if len(body) < n:
        raise ImageFormatError(f"{path}: truncated file ({len(body)} of {n} pixel bytes)")
    return np.frombuffer(body, dtype=dtype).reshape(height, width), maxval


def _read_png(path) -> tuple[np.ndarray, int]:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.array(im)
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    if mode == "L":
        return arr, 255
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        if arr.size and (arr.min() < 0 or arr.max() > 65535):
            raise ImageFormatError(f"{path}: 32-bit PNG values out of 16-bit range")
        return arr.astype(np.uint16), 65535
    raise ImageFormatError(f"{path}: unsupported PNG mode {mode!r} (grayscale only)")


def load_image(path) -> np.ndarray:
    """Read a grayscale PGM (P5) or PNG, scaled by the format maximum into [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ImageFormatError(f"{path}: no such file") from None
    if raw[:2] == b"P5":
        data, maxval = _read_pgm(raw, path)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        data, maxval = _read_png(path)
    else:
        raise ImageFormatError(f"{path}: unsupported format (expected binary PGM or PNG)")
    if data.size == 0:
        raise ImageFormatError(f"{path}: zero-area image")
    return data.astype(np.float64) / maxval


def quantize(img: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    maxval = (1 << bit_depth) - 1
    q = np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5)
    return q.astype(np.uint16 if bit_depth == 16 else np.uint8)


def save_image(img: np.ndarray, path, bit_depth: int = 8) -> None:
    """Write an image in [0, 1] as PGM or PNG (chosen by suffix) at 8 or 16 bits."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    path = Path(path)
    q = quantize(img, bit_depth)
    if path.suffix.lower() == ".png":
        from PIL import Image as PILImage

        if bit_depth == 8:
            PILImage.fromarray(q, mode="L").save(path)
        else:
            PILImage.fromarray(q.astype(np.uint16)).save(path)
        return
    maxval = (1 << bit_depth) - 1
    header = f"P5\n{q.shape[1]} {q.shape[0]}\n{maxval}\n".encode("ascii")
    body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
    path.write_bytes(header + body)


def normalize(img: np.ndarray) -> np.ndarray:
    """Affine map to [0, 1]; a constant image becomes all 0.5."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.full_like(img, 0.5)
    out = (img - lo) / (hi - lo)
    # guard against 1 ulp overshoot
    return np.clip(out, 0.0, 1.0)


def crop(img: np.ndarray, x0: int, y0: int, w: int, h: int) -> np.ndarray:
    H, W = img.shape
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
        raise ValueError(f"crop window ({x0}, {y0}, {w}, {h}) outside {W}x{H} image")
    return img[y0:y0 + h, x0:x0 + w].copy()


def tiles(img: np.ndarray, size: int) -> list[np.ndarray]:
    """Non-overlapping size x size crops in row-major order; ragged edges dropped."""
    H, W = img.shape
    return [crop(img, x, y, size, size)
            for y in range(0, H - size + 1, size)
            for x in range(0, W - size + 1, size)]


def _box_weights(n_src: int, n_dst: int) -> np.ndarray:
    # row i holds the overlap of output cell i with each source pixel
    edges = np.arange(n_dst + 1) * (n_src / n_dst)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_src)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def downsample(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Area-average (box) resampling to w x h."""
    H, W = img.shape
    if w > W or h > H or w < 1 or h < 1:
        raise ValueError(f"cannot downsample {W}x{H} to {w}x{h}")
    out = _box_weights(H, h) @ img @ _box_weights(W, w).T
    return np.clip(out, img.min(), img.max())


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def to_text(self) -> str:
        lines = [f"{name}\t{i}" for name in ("train", "validation", "test")
                 for i in getattr(self, name)]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str, seed: int = 0) -> "DatasetSplit":
        split = cls(seed=seed)
        for line in text.splitlines():
            if not line:
                continue
            name, ident = line.split("\t", 1)
            getattr(split, name).append(ident)
        return split


def _hash_unit(ident: str, seed: int) -> float:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(str(ident).encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def split_dataset(ids, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Partition ids into train/validation/test by a keyed hash of each id.

    Membership of an id depends only on (id, seed, ratios), so the split is
    stable when the corpus is reordered or extended.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("empty corpus")
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
        raise ValueError(f"degenerate ratios {tuple(ratios)}")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in corpus")
    cut1, cut2 = r[0], r[0] + r[1]
    split = DatasetSplit(seed=seed)
    for ident in ids:
        u = _hash_unit(ident, seed)
        if u < cut1:
            split.train.append(ident)
        elif u < cut2:
            split.validation.append(ident)
        else:
            split.test.append(ident)
    return split
