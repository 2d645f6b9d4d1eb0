"""Declarative run configuration: one JSON file drives every pipeline stage.

The master seed propagates to all stages through derived child seeds, and the
run directory is named by the config hash plus the seed, so identical configs
always land in (and reproduce) the same artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Bad config file or override: message carries the offending field."""


@dataclass
class WorldSection:
    n_parcels: int = 2000
    n_provinces: int = 7
    province_radius_km: float = 10.0
    base_price: float = 50000.0
    spatial_sigma: float = 0.35
    correlation_length_km: float = 5.0
    img_sigma: float = 0.30
    noise_sigma: float = 0.10
    tile_side: int = 64


@dataclass
class PairsSection:
    radius_km: float = 3.0
    tau: float = 0.2
    max_neighbors: int = 15
    n_keep: int = 14
    tile_kinds: list[str] = field(default_factory=lambda: ["satellite", "segmented"])


@dataclass
class TreesSection:
    n_trees: int = 120
    max_depth: int = 12
    min_leaf: int = 5
    n_jobs: int = 1
    select_n_trees: int = 50
    select_max_depth: int = 10


@dataclass
class GbtSection:
    n_rounds: int = 200
    learning_rate: float = 0.05
    max_depth: int = 3
    min_leaf: int = 5


@dataclass
class NeuralSection:
    side: int = 64
    tower_widths: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    hidden: list[int] = field(default_factory=lambda: [400, 200, 100, 50])
    dropout: float = 0.07
    freeze_blocks: int = 0
    symmetrize: bool = False
    tile_kind: str = "satellite"
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.025
    momentum: float = 0.9
    lr_min: float = 1e-4
    t0: float = 10.0
    t_mult: float = 2.0
    patience: int = 5
    max_train_pairs: int = 768
    val_eval_pairs: int = 768  # validation subsample scored per epoch
    augment: bool = True


@dataclass
class EnsembleSection:
    n_trials: int = 500


@dataclass
class EvalSection:
    theta_points: int = 101
    theta_default: float = 0.5
    coverage_denominator: str = "evaluated"
    mape_target_pct: float = 20.0


def _default_large() -> NeuralSection:
    return NeuralSection(
        side=128, epochs=6, t0=3.0, max_train_pairs=384, val_eval_pairs=384,
        patience=3, freeze_blocks=1,
    )


@dataclass
class RunConfig:
    out_dir: str = "runs"
    seed: int = 7
    world: WorldSection = field(default_factory=WorldSection)
    pairs: PairsSection = field(default_factory=PairsSection)
    trees: TreesSection = field(default_factory=TreesSection)
    gbt: GbtSection = field(default_factory=GbtSection)
    dl_small: NeuralSection = field(default_factory=NeuralSection)
    dl_large: NeuralSection = field(default_factory=_default_large)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Hash of everything except the seed; the seed is appended to the
        run directory name separately."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:10]

    def run_dir(self) -> Path:
        return Path(self.out_dir) / f"{self.config_hash()}-s{self.seed}"


def _merge_section(obj, data: dict, path: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config field {path}{key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"field {path}{key} must be an object")
            _merge_section(current, value, f"{path}{key}.")
        else:
            setattr(obj, key, value)


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Defaults, overlaid by the JSON file, then ``--set k.path=value`` pairs."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        _merge_section(cfg, data, "")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not hasattr(node, part) or not is_dataclass(getattr(node, part)):
                raise ConfigError(f"unknown config section {key!r}")
            node = getattr(node, part)
        if not hasattr(node, parts[-1]):
            raise ConfigError(f"unknown config field {key!r}")
        setattr(node, parts[-1], value)
    if seed is not None:
        cfg.seed = seed
    return cfg


def derive_seed(master: int, tag: int) -> int:
    """Stable child seed for a pipeline stage."""
    return int(np.random.SeedSequence([master, tag]).generate_state(1)[0])


# Stage tags for derive_seed
SEED_WORLD = 0
SEED_SPLIT = 1
SEED_SELECT = 2
SEED_EXTRA_TREES = 3
SEED_RANDOM_FOREST = 4
SEED_DL_SMALL = 5
SEED_DL_LARGE = 6
SEED_RF_LATENT = 7
SEED_GBT = 8
SEED_ENSEMBLE = 9
SEED_ET_NOIMG = 10
