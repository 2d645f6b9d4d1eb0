"""Synthetic world generator: clustered parcels with a smooth spatial
log-price field, attribute effects, and procedural tiles whose color
statistics carry real price signal.

The generator exists so the pipeline's directional claims are testable
without proprietary data. Log-prices decompose into independent components
(spatial field, tabular attributes, an image-only factor, observation noise)
whose scales are all configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from landval.data import Dataset, LandParcel, save_parcels
from landval.geo import KM_PER_DEG_LAT
from landval.tiles import Tile, TileStore

LAND_USES = ("residential", "commercial", "agricultural", "industrial")
_LAND_USE_EFFECT = {"residential": 0.0, "commercial": 0.30, "agricultural": -0.30, "industrial": 0.10}
_LAND_USE_PROBS = (0.5, 0.2, 0.2, 0.1)
_CELL_DEG = 0.01  # ~1.1 km street cells


@dataclass(frozen=True)
class WorldConfig:
    n_parcels: int = 2000
    n_provinces: int = 7
    seed: int = 0
    center_lat: float = 15.0
    center_lon: float = 100.0
    province_ring_deg: float = 1.2  # provinces sit on a ring of this radius
    province_radius_km: float = 10.0
    base_price: float = 50000.0  # THB per square wa
    spatial_sigma: float = 0.35
    correlation_length_km: float = 5.0
    bumps_per_province: int = 3
    img_sigma: float = 0.30  # price factor visible only through tiles
    noise_sigma: float = 0.10
    street_effect_sigma: float = 0.10
    tile_side: int = 64
    tile_kinds: tuple[str, ...] = ("satellite", "segmented")
    date_start: date = date(2020, 1, 1)
    date_days: int = 1095  # ~3 years

    def __post_init__(self):
        if self.correlation_length_km <= 0:
            raise ValueError("correlation_length_km must be positive")
        if self.noise_sigma < 0 or self.img_sigma < 0:
            raise ValueError("sigmas must be non-negative")


@dataclass
class SynthWorld:
    cfg: WorldConfig
    dataset: Dataset
    tiles: dict[tuple[str, str], Tile] = field(repr=False, default_factory=dict)
    # per-parcel latents, kept for diagnostics and ground truth
    _truth: dict[str, float] = field(repr=False, default_factory=dict)
    _img_factor: dict[str, float] = field(repr=False, default_factory=dict)
    _spatial: dict[str, float] = field(repr=False, default_factory=dict)

    def ground_truth(self, parcel_id: str) -> float:
        """Noiseless price of the latent field; diagnostics only."""
        return self._truth[parcel_id]


def _street_cell(lat: float, lon: float) -> tuple[int, int]:
    return (math.floor(lat / _CELL_DEG), math.floor(lon / _CELL_DEG))


def _cell_rng(seed: int, tag: int, cell: tuple[int, int]) -> np.random.Generator:
    return np.random.default_rng([seed, tag, cell[0] + 1_000_000, cell[1] + 1_000_000])


def _street_effect(cfg: WorldConfig, cell: tuple[int, int]) -> float:
    return float(_cell_rng(cfg.seed, 11, cell).normal(0.0, cfg.street_effect_sigma))


def _cell_land_use(cfg: WorldConfig, cell: tuple[int, int]) -> str:
    r = _cell_rng(cfg.seed, 12, cell)
    return LAND_USES[int(r.choice(len(LAND_USES), p=_LAND_USE_PROBS))]


def generate_world(cfg: WorldConfig) -> SynthWorld:
    """Deterministic world for a given config.

    Parcels cluster around province centers; log-price = spatial bump field +
    attribute effects + image factor + noise. Satellite tile greenness is a
    monotone function of the image factor, segmented tile darkness tracks the
    spatial field, so image features carry signal the tabular data lacks.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    n = cfg.n_parcels

    # Province centers on a ring, parcels uniform in a disc around each.
    angles = 2.0 * math.pi * np.arange(cfg.n_provinces) / max(cfg.n_provinces, 1)
    prov_lat = cfg.center_lat + cfg.province_ring_deg * np.sin(angles)
    prov_lon = cfg.center_lon + cfg.province_ring_deg * np.cos(angles)
    provinces = [f"province_{i + 1:02d}" for i in range(cfg.n_provinces)]

    prov_idx = np.sort(rng.integers(0, cfg.n_provinces, size=n)) if n else np.zeros(0, int)
    radius_deg = cfg.province_radius_km / KM_PER_DEG_LAT
    rr = radius_deg * np.sqrt(rng.random(n))
    theta = 2.0 * math.pi * rng.random(n)
    lats = prov_lat[prov_idx] + rr * np.sin(theta)
    lons = prov_lon[prov_idx] + rr * np.cos(theta) / np.cos(np.radians(cfg.center_lat))

    # Smooth spatial field: seeded radial bumps, rescaled to spatial_sigma.
    n_bumps = cfg.bumps_per_province * cfg.n_provinces
    bump_prov = rng.integers(0, cfg.n_provinces, size=n_bumps)
    bump_lat = prov_lat[bump_prov] + radius_deg * rng.normal(0, 0.7, n_bumps)
    bump_lon = prov_lon[bump_prov] + radius_deg * rng.normal(0, 0.7, n_bumps)
    bump_amp = rng.normal(0.0, 1.0, n_bumps)
    ell_deg = cfg.correlation_length_km / KM_PER_DEG_LAT

    def raw_field(lat, lon):
        d2 = ((lat[:, None] - bump_lat[None, :]) ** 2 +
              ((lon[:, None] - bump_lon[None, :]) * math.cos(math.radians(cfg.center_lat))) ** 2)
        return (np.exp(-0.5 * d2 / ell_deg**2) * bump_amp[None, :]).sum(axis=1)

    spatial = raw_field(lats, lons) if n else np.zeros(0)
    if n > 1 and spatial.std() > 0:
        spatial = (spatial - spatial.mean()) / spatial.std() * cfg.spatial_sigma

    # Tabular attributes.
    road_width = rng.uniform(4.0, 30.0, size=n)
    dist_main = rng.exponential(250.0, size=n)
    area = np.exp(rng.normal(math.log(100.0), 0.5, size=n))
    attr_effect = (
        0.15 * (road_width - 17.0) / 7.5
        - 0.12 * (dist_main / 250.0 - 1.0)
        + 0.08 * (np.log(area) - math.log(100.0)) / 0.5
    )

    img_factor = rng.normal(0.0, cfg.img_sigma, size=n)
    noise = rng.normal(0.0, cfg.noise_sigma, size=n) if cfg.noise_sigma > 0 else np.zeros(n)
    day_offsets = rng.integers(0, cfg.date_days, size=n)

    world = SynthWorld(cfg=cfg, dataset=None)  # dataset filled below
    parcels: list[LandParcel] = []
    for i in range(n):
        pid = f"L{i:05d}"
        cell = _street_cell(lats[i], lons[i])
        street = f"S{cell[0] % 1000:03d}{cell[1] % 1000:03d}"
        if rng.random() < 0.7:
            land_use = _cell_land_use(cfg, cell)
        else:
            land_use = LAND_USES[int(rng.choice(len(LAND_USES), p=_LAND_USE_PROBS))]
        log_price_clean = (
            math.log(cfg.base_price)
            + spatial[i]
            + attr_effect[i]
            + _LAND_USE_EFFECT[land_use]
            + _street_effect(cfg, cell)
            + img_factor[i]
        )
        truth = math.exp(log_price_clean)
        price = math.exp(log_price_clean + noise[i])
        parcels.append(
            LandParcel(
                id=pid,
                lat=float(lats[i]),
                lon=float(lons[i]),
                price=price,
                appraisal_date=cfg.date_start + timedelta(days=int(day_offsets[i])),
                province=provinces[prov_idx[i]],
                continuous_attrs={
                    "road_width_m": float(road_width[i]),
                    "dist_main_street_m": float(dist_main[i]),
                    "area_sq_wa": float(area[i]),
                },
                categorical_attrs={"land_use": land_use, "street_id": street},
            )
        )
        world._truth[pid] = truth
        world._img_factor[pid] = float(img_factor[i])
        world._spatial[pid] = float(spatial[i])

    ds = Dataset(
        parcels=parcels,
        continuous_names=["road_width_m", "dist_main_street_m", "area_sq_wa"],
        categorical_names=["land_use", "street_id"],
        categorical_vocab={},
    )
    ds.build_vocab()
    world.dataset = ds

    for i, p in enumerate(parcels):
        tile_rng = np.random.default_rng([cfg.seed, 2, i])
        if "satellite" in cfg.tile_kinds:
            world.tiles[(p.id, "satellite")] = _satellite_tile(
                cfg, p.id, world._img_factor[p.id], tile_rng
            )
        if "segmented" in cfg.tile_kinds:
            world.tiles[(p.id, "segmented")] = _segmented_tile(
                cfg, p.id, world._spatial[p.id], tile_rng
            )
    return world


def _coarse_noise(rng: np.random.Generator, side: int, amplitude: float) -> np.ndarray:
    """Low-frequency texture: 8x8 noise upsampled to the tile side."""
    small = rng.normal(0.0, amplitude, size=(8, 8))
    reps = side // 8
    return np.repeat(np.repeat(small, reps, axis=0), reps, axis=1)


def _satellite_tile(cfg: WorldConfig, pid: str, img_factor: float, rng) -> Tile:
    s = cfg.tile_side
    # Mean green level rises monotonically with the image factor.
    g_level = 95.0 + 75.0 / (1.0 + math.exp(-2.2 * img_factor))
    r = 85.0 + _coarse_noise(rng, s, 14.0) + rng.normal(0, 9.0, (s, s))
    g = g_level + _coarse_noise(rng, s, 14.0) + rng.normal(0, 9.0, (s, s))
    b = 70.0 + _coarse_noise(rng, s, 12.0) + rng.normal(0, 9.0, (s, s))
    px = np.clip(np.rint(np.stack([r, g, b], axis=-1)), 0, 255).astype(np.uint8)
    return Tile(parcel_id=pid, kind="satellite", pixels=px)


def _segmented_tile(cfg: WorldConfig, pid: str, spatial: float, rng) -> Tile:
    s = cfg.tile_side
    # Built-up (bright) where the spatial field is high, darker otherwise.
    base = 160.0 + 50.0 * math.tanh(spatial / max(cfg.spatial_sigma, 1e-9))
    px = np.full((s, s, 3), base) + rng.normal(0, 4.0, (s, s, 3))
    palette = np.array(
        [[120, 120, 120], [230, 180, 110], [90, 140, 220], [110, 190, 120]], dtype=float
    )
    n_rects = int(rng.integers(4, 9))
    for _ in range(n_rects):
        color = palette[int(rng.integers(0, len(palette)))]
        y0, x0 = rng.integers(0, s, size=2)
        h, w = rng.integers(s // 8, s // 3, size=2)
        px[y0 : min(y0 + h, s), x0 : min(x0 + w, s)] = color
    px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
    return Tile(parcel_id=pid, kind="segmented", pixels=px)


def world_ground_truth(world: SynthWorld, parcel_id: str) -> float:
    return world.ground_truth(parcel_id)


def write_world(world: SynthWorld, data_dir: str | Path) -> None:
    """Emit the CSV + PNG layout that core data loading and the tile store
    consume: <data_dir>/parcels.csv and <data_dir>/tiles/<kind>/<id>.png."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    save_parcels(world.dataset, data_dir / "parcels.csv")
    store = TileStore(data_dir / "tiles")
    for (pid, kind), tile in sorted(world.tiles.items()):
        store.save(tile)
