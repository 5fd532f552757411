"""Scene sets: synthetic generators and PGM/PPM (netpbm) ingestion."""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidDimensionError, InvalidInputError

log = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("piecewise", "sinusoid", "checker", "smooth")
_EXTENSIONS = {".pgm", ".ppm", ".pnm"}


# -- synthetic scenes ---------------------------------------------------------


def synthetic_scene(kind: str, side: int, seed: int = 0) -> np.ndarray:
    """One grayscale scene in [0, 1]."""
    rng = np.random.default_rng([seed, SYNTHETIC_KINDS.index(kind)] if kind in SYNTHETIC_KINDS else seed)
    u = np.arange(side) / side
    y, x = np.meshgrid(u, u, indexing="ij")
    if kind == "piecewise":
        img = np.full((side, side), 0.2)
        for _ in range(6):
            r0, c0 = rng.integers(0, side - side // 4, 2)
            h, w = rng.integers(side // 8, side // 2, 2)
            img[r0 : r0 + h, c0 : c0 + w] = rng.uniform(0.1, 0.9)
    elif kind == "sinusoid":
        theta = rng.uniform(0, np.pi)
        f = rng.uniform(2, 6)
        img = 0.5 + 0.4 * np.sin(2 * np.pi * f * (x * np.cos(theta) + y * np.sin(theta)))
    elif kind == "checker":
        cell = max(1, side // int(rng.integers(4, 9)))
        i = np.arange(side) // cell
        img = np.where((i[:, None] + i[None, :]) % 2 == 0, 0.8, 0.2)
    elif kind == "smooth":
        white = rng.normal(size=(side, side))
        fy = np.fft.fftfreq(side)[:, None]
        fx = np.fft.fftfreq(side)[None, :]
        img = np.fft.ifft2(np.fft.fft2(white) * np.exp(-((fx**2 + fy**2) / 0.05**2))).real
        img = (img - img.min()) / (np.ptp(img) or 1.0)
    else:
        raise InvalidInputError(f"unknown synthetic scene {kind!r}; choose from {SYNTHETIC_KINDS}")
    return np.clip(img, 0.0, 1.0)


def synthetic_scenes(side: int, seed: int = 0, bands: int = 1) -> list[np.ndarray]:
    """The four synthetic scenes; ``bands > 1`` stacks independent variants per band."""
    if bands == 1:
        return [synthetic_scene(k, side, seed) for k in SYNTHETIC_KINDS]
    return [np.stack([synthetic_scene(k, side, seed * 1009 + b) for b in range(bands)]) for k in SYNTHETIC_KINDS]


# -- netpbm --------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_netpbm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6), 8 or 16 bit, scaled by 1/maxval.

    PGM gives (rows, cols); PPM gives (3, rows, cols).
    """
    raw = Path(path).read_bytes()
    pos, fields = 0, []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise InvalidInputError(f"{path}: truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields[0], *(int(f) for f in fields[1:])
    if magic not in (b"P5", b"P6"):
        raise InvalidInputError(f"{path}: unsupported netpbm type {magic!r}")
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise InvalidInputError(f"{path}: invalid header values")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    if len(raw) < pos + 1 + count * dtype.itemsize:
        raise InvalidInputError(f"{path}: pixel data shorter than header declares")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos + 1)
    img = data.astype(np.float64).reshape(h, w, channels) / maxval
    return img[:, :, 0] if channels == 1 else np.moveaxis(img, -1, 0)


def write_netpbm(path, img, bits: int = 8) -> None:
    img = np.asarray(img, dtype=np.float64)
    if bits not in (8, 16):
        raise InvalidInputError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    if img.ndim == 2:
        magic, pix = b"P5", img[:, :, None]
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, pix = b"P6", np.moveaxis(img, 0, -1)
    else:
        raise InvalidDimensionError(f"expected (rows, cols) or (3, rows, cols), got {img.shape}")
    q = np.rint(np.clip(pix, 0.0, 1.0) * maxval).astype(">u2" if bits == 16 else "u1")
    h, w = pix.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + q.tobytes())


def center_crop(img: np.ndarray, side: int) -> np.ndarray:
    rows, cols = img.shape[-2:]
    if rows < side or cols < side:
        raise InvalidDimensionError(f"image {rows}x{cols} is smaller than side {side}")
    r0, c0 = (rows - side) // 2, (cols - side) // 2
    return img[..., r0 : r0 + side, c0 : c0 + side]


def ingest_images(directory, side: int, synthetic: bool = False, seed: int = 0, bands: int = 1) -> list[np.ndarray]:
    """Load every PGM/PPM under ``directory`` (sorted), center-cropped to ``side``.

    Unreadable or too-small files are skipped with a warning. With no usable
    files the four synthetic scenes are returned if ``synthetic`` is set.
    ``bands`` converts gray to color by replication and color to gray by
    averaging.
    """
    scenes = []
    root = Path(directory) if directory is not None else None
    if root is not None:
        if not root.is_dir():
            raise ConfigurationError(f"scene directory {root} does not exist")
        for path in sorted(p for p in root.iterdir() if p.suffix.lower() in _EXTENSIONS):
            try:
                img = center_crop(read_netpbm(path), side)
            except (InvalidInputError, InvalidDimensionError, OSError) as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            if bands == 1 and img.ndim == 3:
                img = img.mean(axis=0)
            elif bands > 1 and img.ndim == 2:
                img = np.repeat(img[None], bands, axis=0)
            elif bands > 1 and img.shape[0] != bands:
                log.warning("skipping %s: %d bands, need %d", path, img.shape[0], bands)
                continue
            scenes.append(np.ascontiguousarray(img))
    if not scenes:
        if not synthetic:
            raise ConfigurationError(f"no usable scenes in {directory}; pass --synthetic to use generated scenes")
        return synthetic_scenes(side, seed, bands)
    return scenes


def scene_set(side: int, directory=None, seed: int = 0, bands: int = 1, limit: int = 4) -> list[np.ndarray]:
    """Four synthetic scenes plus up to ``limit`` user images."""
    scenes = synthetic_scenes(side, seed, bands)
    if directory is not None:
        try:
            user = ingest_images(directory, side, synthetic=False, bands=bands)
        except ConfigurationError:
            user = []
        scenes += user[:limit]
    return scenes
