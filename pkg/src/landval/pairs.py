"""Labeled land-pair construction: differenced features, similarity labels,
and tree-importance feature selection.

Feature order is fixed dataset-wide by a FeatureSchema: continuous absolute
differences, categorical same/different flags, per-kind color differences plus
a missing-tile sentinel, then the pair distance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from landval.data import Dataset, LandParcel, SplitAssignment, SPLITS
from landval.geo import SpatialIndex
from landval.tiles import ColorStats, Tile, TileStore, color_stats
from landval.trees import TreeConfig, fit_ensemble

KIND_CONT_DIFF = "cont_diff"
KIND_CAT_SAME = "cat_same"
KIND_COLOR_DIFF = "color_diff"
KIND_DISTANCE = "distance"

_COLOR_CHANNELS = ("greenness", "blueness", "darkness")
_SPLIT_RANK = {s: i for i, s in enumerate(SPLITS)}


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered pair-feature names/kinds plus the selected subset mask."""

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    selected: tuple[bool, ...]

    def __post_init__(self):
        if not len(self.names) == len(self.kinds) == len(self.selected):
            raise ValueError("names, kinds and selected must have equal length")

    @property
    def n_features(self) -> int:
        return len(self.names)

    def selected_indices(self) -> np.ndarray:
        return np.nonzero(np.asarray(self.selected))[0]

    def selected_names(self) -> list[str]:
        return [n for n, s in zip(self.names, self.selected) if s]

    def with_mask(self, selected) -> "FeatureSchema":
        return replace(self, selected=tuple(bool(s) for s in selected))

    def without_image_features(self) -> "FeatureSchema":
        """Mask out color-diff features (the image-free baseline regime)."""
        return self.with_mask(
            [s and k != KIND_COLOR_DIFF for s, k in zip(self.selected, self.kinds)]
        )

    def to_json(self) -> dict:
        return {
            "names": list(self.names),
            "kinds": list(self.kinds),
            "selected": [int(s) for s in self.selected],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        return cls(
            names=tuple(obj["names"]),
            kinds=tuple(obj["kinds"]),
            selected=tuple(bool(s) for s in obj["selected"]),
        )


@dataclass(frozen=True)
class PairRecord:
    """One (primary, neighbor) comparison with its differenced feature row."""

    primary_id: str
    neighbor_id: str
    distance_km: float
    features: np.ndarray
    label: int
    split: str  # inherited from the primary parcel
    neighbor_split: str = "train"


def make_feature_schema(ds: Dataset, tile_kinds: tuple[str, ...] = ()) -> FeatureSchema:
    names: list[str] = []
    kinds: list[str] = []
    for c in ds.continuous_names:
        names.append(f"d_{c}")
        kinds.append(KIND_CONT_DIFF)
    for c in ds.categorical_names:
        names.append(f"same_{c}")
        kinds.append(KIND_CAT_SAME)
    for tk in tile_kinds:
        for ch in _COLOR_CHANNELS:
            names.append(f"cdiff_{tk}_{ch}")
            kinds.append(KIND_COLOR_DIFF)
    if tile_kinds:
        names.append("img_missing")
        kinds.append(KIND_COLOR_DIFF)
    names.append("distance_km")
    kinds.append(KIND_DISTANCE)
    return FeatureSchema(names=tuple(names), kinds=tuple(kinds), selected=tuple([True] * len(names)))


def label_pair(p: LandParcel, q: LandParcel, tau: float) -> int:
    """1 iff the price difference relative to the primary parcel is within tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return int(abs(p.price - q.price) / p.price <= tau)


def _stats_arrays(
    stats: dict[str, ColorStats | None],
    tile_kinds: tuple[str, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """(per-kind stat matrix, per-kind presence flags) for one parcel."""
    vals = np.zeros((len(tile_kinds), 3))
    present = np.zeros(len(tile_kinds), dtype=bool)
    for i, tk in enumerate(tile_kinds):
        st = stats.get(tk)
        if st is not None:
            vals[i] = st.as_array()
            present[i] = True
    return vals, present


def _pair_feature_row(
    p: LandParcel,
    q: LandParcel,
    distance_km: float,
    schema: FeatureSchema,
    ds: Dataset,
    tile_kinds: tuple[str, ...],
    stats_p: dict[str, ColorStats | None],
    stats_q: dict[str, ColorStats | None],
) -> np.ndarray:
    row = np.zeros(schema.n_features)
    i = 0
    for c in ds.continuous_names:
        row[i] = abs(p.continuous_attrs[c] - q.continuous_attrs[c])
        i += 1
    for c in ds.categorical_names:
        row[i] = 1.0 if p.categorical_attrs[c] == q.categorical_attrs[c] else 0.0
        i += 1
    if tile_kinds:
        vp, pres_p = _stats_arrays(stats_p, tile_kinds)
        vq, pres_q = _stats_arrays(stats_q, tile_kinds)
        missing = False
        for k in range(len(tile_kinds)):
            if pres_p[k] and pres_q[k]:
                row[i : i + 3] = np.abs(vp[k] - vq[k])
            else:
                missing = True
            i += 3
        row[i] = 1.0 if missing else 0.0
        i += 1
    row[i] = distance_km
    return row


def diff_features(
    p: LandParcel,
    q: LandParcel,
    tiles: dict[str, tuple[Tile | None, Tile | None]] | None,
    schema: FeatureSchema,
    ds: Dataset,
    distance_km: float = 0.0,
) -> np.ndarray:
    """Differenced feature vector for one pair, in schema order (unmasked).

    ``tiles`` maps tile kind to the (primary, neighbor) tile pair; a missing
    tile on either side sets the sentinel column and zeroes that kind's color
    differences.
    """
    if set(p.continuous_attrs) != set(q.continuous_attrs) or set(p.categorical_attrs) != set(
        q.categorical_attrs
    ):
        raise ValueError("parcels do not share an attribute schema")
    tile_kinds = tuple(sorted(tiles)) if tiles else ()
    stats_p: dict[str, ColorStats | None] = {}
    stats_q: dict[str, ColorStats | None] = {}
    for tk in tile_kinds:
        tp, tq = tiles[tk]
        stats_p[tk] = color_stats(tp) if tp is not None else None
        stats_q[tk] = color_stats(tq) if tq is not None else None
    return _pair_feature_row(p, q, distance_km, schema, ds, tile_kinds, stats_p, stats_q)


def build_pairs(
    ds: Dataset,
    idx: SpatialIndex,
    split: SplitAssignment,
    schema: FeatureSchema,
    radius_km: float = 3.0,
    tau: float = 0.2,
    max_neighbors: int = 30,
    tile_store: TileStore | None = None,
    tile_kinds: tuple[str, ...] = (),
) -> list[PairRecord]:
    """All labeled pairs within the radius, in canonical order.

    For each primary parcel, neighbors are taken nearest-first and capped at
    max_neighbors. A pair is kept only when the neighbor's split does not come
    later than the primary's (train < val < test), so no val/test appraisal
    can leak into training pairs.
    """
    stats_cache: dict[str, dict[str, ColorStats | None]] = {}

    def stats_for(pid: str) -> dict[str, ColorStats | None]:
        if pid not in stats_cache:
            per_kind: dict[str, ColorStats | None] = {}
            for tk in tile_kinds:
                t = tile_store.load(pid, tk) if tile_store is not None else None
                per_kind[tk] = color_stats(t) if t is not None else None
            stats_cache[pid] = per_kind
        return stats_cache[pid]

    records: list[PairRecord] = []
    for p in sorted(ds.parcels, key=lambda x: x.id):
        p_rank = _SPLIT_RANK[split[p.id]]
        kept = 0
        for nid, dist in idx.neighbors_within(p, radius_km):
            if kept >= max_neighbors:
                break
            n_split = split[nid]
            if _SPLIT_RANK[n_split] > p_rank:
                continue
            q = ds.by_id[nid]
            row = _pair_feature_row(
                p, q, dist, schema, ds, tile_kinds, stats_for(p.id), stats_for(nid)
            )
            records.append(
                PairRecord(
                    primary_id=p.id,
                    neighbor_id=nid,
                    distance_km=dist,
                    features=row,
                    label=label_pair(p, q, tau),
                    split=split[p.id],
                    neighbor_split=n_split,
                )
            )
            kept += 1
    return records


def feature_matrix(pairs: list[PairRecord], schema: FeatureSchema | None = None) -> np.ndarray:
    """Stack pair feature rows; applies the schema's selected mask if given."""
    X = np.stack([r.features for r in pairs]) if pairs else np.zeros((0, 0))
    if schema is not None and len(pairs):
        X = X[:, schema.selected_indices()]
    return X


def labels_of(pairs: list[PairRecord]) -> np.ndarray:
    return np.array([r.label for r in pairs], dtype=np.float64)


def select_features(
    X_train: np.ndarray,
    y_train: np.ndarray,
    schema: FeatureSchema,
    n_keep: int,
    seed: int = 0,
    tree_cfg: TreeConfig | None = None,
) -> FeatureSchema:
    """Keep the n_keep features ranked highest by the averaged normalized
    importances of a seeded Random Forest and Extra Trees fit.

    Only features already selected in the incoming schema compete; the rest
    stay masked out.
    """
    active = schema.selected_indices()
    if n_keep >= len(active):
        return schema
    Xa = X_train[:, active]
    cfg = tree_cfg or TreeConfig(n_trees=80, max_depth=10, seed=seed)
    cfg = replace(cfg, seed=seed)
    imp = np.zeros(len(active))
    for kind in ("random_forest", "extra_trees"):
        model = fit_ensemble(kind, Xa, y_train, cfg)
        imp += model.importances()
    imp /= 2.0
    order = np.argsort(-imp, kind="stable")[:n_keep]
    selected = [False] * schema.n_features
    for j in order:
        selected[active[j]] = True
    return schema.with_mask(selected)


# Pair CSV layout: primary_id,neighbor_id,distance_km,label,split,
# neighbor_split,<feature cols...>


def write_pairs_csv(pairs: list[PairRecord], schema: FeatureSchema, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["primary_id", "neighbor_id", "distance_km", "label", "split", "neighbor_split"]
            + list(schema.names)
        )
        for r in pairs:
            w.writerow(
                [r.primary_id, r.neighbor_id, repr(r.distance_km), r.label, r.split, r.neighbor_split]
                + [repr(v) for v in r.features.tolist()]
            )


def read_pairs_csv(path: str | Path, schema: FeatureSchema) -> list[PairRecord]:
    path = Path(path)
    pairs: list[PairRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["primary_id", "neighbor_id", "distance_km", "label", "split", "neighbor_split"] + list(
            schema.names
        )
        if header != expected:
            raise ValueError(f"{path}: pair CSV header does not match schema")
        for row in reader:
            pairs.append(
                PairRecord(
                    primary_id=row[0],
                    neighbor_id=row[1],
                    distance_km=float(row[2]),
                    features=np.array([float(v) for v in row[6:]]),
                    label=int(row[3]),
                    split=row[4],
                    neighbor_split=row[5],
                )
            )
    return pairs


def save_schema(schema: FeatureSchema, path: str | Path, extra: dict | None = None) -> None:
    obj = schema.to_json()
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def load_schema(path: str | Path) -> FeatureSchema:
    return FeatureSchema.from_json(json.loads(Path(path).read_text()))
