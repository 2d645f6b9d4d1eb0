"""Tiles, resizing, training-time augmentation, and hand-engineered color
features.

Color features are deliberately computed from integer channel sums so they are
exactly invariant to flips and 90-degree rotations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

TILE_SIDES = (64, 128, 256, 512)
TILE_KINDS = ("satellite", "segmented")


@dataclass(frozen=True)
class Tile:
    """Square RGB raster centered on a parcel, ~740x740 m ground coverage."""

    parcel_id: str
    kind: str
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be (H, W, 3) uint8")
        if px.shape[0] != px.shape[1] or px.shape[0] not in TILE_SIDES:
            raise ValueError(f"tile side must be square, one of {TILE_SIDES}")

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ColorStats:
    greenness: float  # mean excess green, in [-1, 1]
    blueness: float  # mean excess blue, in [-1, 1]
    darkness: float  # luminance complement, in [0, 1]

    def as_array(self) -> np.ndarray:
        return np.array([self.greenness, self.blueness, self.darkness])


def bilinear_resize(pixels: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) uint8 array to (side, side, C).

    Uses half-pixel sample centers, so resizing to the same side is an exact
    identity.
    """
    h, w = pixels.shape[:2]
    src = pixels.astype(np.float64)
    ys = (np.arange(side) + 0.5) * (h / side) - 0.5
    xs = (np.arange(side) + 0.5) * (w / side) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize(t: Tile, side: int) -> Tile:
    """Resize a tile to a supported square side (bilinear)."""
    if side not in TILE_SIDES:
        raise ValueError(f"unsupported side {side}, expected one of {TILE_SIDES}")
    return replace(t, pixels=bilinear_resize(t.pixels, side))


@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and magnitudes for training-time tile augmentation."""

    rotate_prob: float = 0.5
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    jitter_prob: float = 0.5
    jitter_strength: float = 0.1  # per-channel brightness scale in [1-s, 1+s]
    noise_prob: float = 0.5
    noise_sigma: float = 4.0  # gaussian std in 8-bit units

    def __post_init__(self):
        for name in ("rotate_prob", "hflip_prob", "vflip_prob", "jitter_prob", "noise_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.jitter_strength < 0:
            raise ValueError("jitter_strength must be non-negative")


def augment(t: Tile, cfg: AugmentConfig, seed: int) -> Tile:
    """Seeded composition of rotation, flips, brightness jitter and noise.

    Each transform fires independently with its configured probability; the
    same seed always yields the same output. Augmentation is only for neural
    training inputs, never for color feature extraction.
    """
    rng = np.random.default_rng(seed)
    px = t.pixels
    if rng.random() < cfg.rotate_prob:
        px = np.rot90(px, k=int(rng.integers(1, 4)), axes=(0, 1))
    if rng.random() < cfg.hflip_prob:
        px = px[:, ::-1]
    if rng.random() < cfg.vflip_prob:
        px = px[::-1, :]
    px = px.astype(np.float64)
    if rng.random() < cfg.jitter_prob:
        scale = rng.uniform(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength, size=3)
        px = px * scale[None, None, :]
    if rng.random() < cfg.noise_prob:
        px = px + rng.normal(0.0, cfg.noise_sigma, size=px.shape)
    px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    return replace(t, pixels=np.ascontiguousarray(px))


def color_stats(t: Tile) -> ColorStats:
    """Greenness, blueness and darkness of a tile.

    greenness = mean((2G - R - B) / 510), blueness = mean((2B - R - G) / 510),
    darkness = 1 - mean(R + G + B) / 765. Channel sums are taken in integer
    arithmetic, so the stats are exactly invariant to flips and rotations.
    """
    px = t.pixels.astype(np.int64)
    n = px.shape[0] * px.shape[1]
    r = int(px[:, :, 0].sum())
    g = int(px[:, :, 1].sum())
    b = int(px[:, :, 2].sum())
    return ColorStats(
        greenness=(2 * g - r - b) / (510.0 * n),
        blueness=(2 * b - r - g) / (510.0 * n),
        darkness=1.0 - (r + g + b) / (765.0 * n),
    )


def color_diff_features(a: Tile, b: Tile) -> np.ndarray:
    """Absolute differences of the two tiles' color stats (3 values)."""
    if a.side != b.side:
        raise ValueError(f"tile side mismatch: {a.side} vs {b.side}")
    return np.abs(color_stats(a).as_array() - color_stats(b).as_array())


class TileStore:
    """Directory-backed tile storage: ``<root>/<kind>/<parcel_id>.png``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, parcel_id: str, kind: str) -> Path:
        return self.root / kind / f"{parcel_id}.png"

    def save(self, t: Tile) -> Path:
        p = self.path(t.parcel_id, t.kind)
        p.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(t.pixels, mode="RGB").save(p, format="PNG")
        return p

    def load(self, parcel_id: str, kind: str) -> Tile | None:
        p = self.path(parcel_id, kind)
        if not p.exists():
            return None
        with Image.open(p) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        return Tile(parcel_id=parcel_id, kind=kind, pixels=pixels)

    def kinds_present(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(d.name for d in self.root.iterdir() if d.is_dir())
