"""Domain types, parcel CSV ingestion, and the temporal train/val/test split.

Parcel CSV layout: ``id,lat,lon,price,appraisal_date,province,<continuous
cols...>,<categorical cols prefixed cat_...>``. Dates are ISO ``YYYY-MM-DD``,
prices are THB per square wa.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
FIXED_COLUMNS = ("id", "lat", "lon", "price", "appraisal_date", "province")
CATEGORICAL_PREFIX = "cat_"


class ParcelCsvError(ValueError):
    """Raised when a parcel CSV row violates the schema or an invariant."""


@dataclass(frozen=True)
class LandParcel:
    """One appraised land parcel."""

    id: str
    lat: float
    lon: float
    price: float  # THB per square wa
    appraisal_date: date
    province: str
    continuous_attrs: dict[str, float]
    categorical_attrs: dict[str, str]

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"parcel {self.id}: price must be positive")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"parcel {self.id}: lat out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"parcel {self.id}: lon out of range")


@dataclass
class Dataset:
    """Parcels plus their shared attribute schema.

    ``categorical_vocab`` maps each categorical attribute to the sorted tuple
    of values observed across the dataset.
    """

    parcels: list[LandParcel]
    continuous_names: list[str]
    categorical_names: list[str]
    categorical_vocab: dict[str, tuple[str, ...]]
    _by_id: dict[str, LandParcel] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._by_id:
            self._by_id = {p.id: p for p in self.parcels}
        if len(self._by_id) != len(self.parcels):
            raise ValueError("parcel ids must be unique")

    @property
    def by_id(self) -> dict[str, LandParcel]:
        return self._by_id

    def __len__(self) -> int:
        return len(self.parcels)

    @property
    def provinces(self) -> list[str]:
        return sorted({p.province for p in self.parcels})

    def build_vocab(self) -> None:
        """Rebuild categorical vocabularies from the parcels present."""
        self.categorical_vocab = {
            name: tuple(sorted({p.categorical_attrs[name] for p in self.parcels}))
            for name in self.categorical_names
        }


@dataclass(frozen=True)
class SplitAssignment:
    """Total, disjoint map of parcel id to one of train/val/test."""

    assignment: dict[str, str]

    def __getitem__(self, parcel_id: str) -> str:
        return self.assignment[parcel_id]

    def ids(self, split: str) -> list[str]:
        return sorted(pid for pid, s in self.assignment.items() if s == split)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for s in self.assignment.values():
            out[s] += 1
        return out


def _parse_float(raw: str, column: str, row_num: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ParcelCsvError(f"row {row_num}: unparsable number {raw!r} in column {column!r}") from None
    if not np.isfinite(v):
        raise ParcelCsvError(f"row {row_num}: non-finite value in column {column!r}")
    return v


def load_parcels(path: str | Path) -> Dataset:
    """Load a parcel CSV into a Dataset, validating every row.

    Rows failing validation (missing column, unparsable number, non-positive
    price, out-of-range coordinate) raise ParcelCsvError naming the data row
    (1-based, excluding the header).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise ParcelCsvError(f"{path}: empty file, header row required")
        missing = [c for c in FIXED_COLUMNS if c not in header]
        if missing:
            raise ParcelCsvError(f"{path}: missing required columns {missing}")
        extra = [c for c in header if c not in FIXED_COLUMNS]
        cont_names = [c for c in extra if not c.startswith(CATEGORICAL_PREFIX)]
        cat_names = [c[len(CATEGORICAL_PREFIX):] for c in extra if c.startswith(CATEGORICAL_PREFIX)]

        parcels: list[LandParcel] = []
        for row_num, row in enumerate(reader, start=1):
            if None in row or any(v is None for v in row.values()):
                raise ParcelCsvError(f"row {row_num}: wrong number of fields")
            lat = _parse_float(row["lat"], "lat", row_num)
            lon = _parse_float(row["lon"], "lon", row_num)
            price = _parse_float(row["price"], "price", row_num)
            if price <= 0:
                raise ParcelCsvError(f"row {row_num}: price must be positive, got {row['price']}")
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise ParcelCsvError(f"row {row_num}: coordinate out of range ({lat}, {lon})")
            try:
                when = date.fromisoformat(row["appraisal_date"])
            except ValueError:
                raise ParcelCsvError(
                    f"row {row_num}: bad appraisal_date {row['appraisal_date']!r}, expected YYYY-MM-DD"
                ) from None
            cont = {c: _parse_float(row[c], c, row_num) for c in cont_names}
            cat = {c: row[CATEGORICAL_PREFIX + c] for c in cat_names}
            parcels.append(
                LandParcel(
                    id=row["id"],
                    lat=lat,
                    lon=lon,
                    price=price,
                    appraisal_date=when,
                    province=row["province"],
                    continuous_attrs=cont,
                    categorical_attrs=cat,
                )
            )

    ds = Dataset(
        parcels=parcels,
        continuous_names=cont_names,
        categorical_names=cat_names,
        categorical_vocab={},
    )
    ds.build_vocab()
    return ds


def save_parcels(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset back to the parcel CSV layout (round-trips load_parcels)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(FIXED_COLUMNS) + ds.continuous_names + [
        CATEGORICAL_PREFIX + c for c in ds.categorical_names
    ]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in ds.parcels:
            row = [
                p.id,
                repr(p.lat),
                repr(p.lon),
                repr(p.price),
                p.appraisal_date.isoformat(),
                p.province,
            ]
            row += [repr(p.continuous_attrs[c]) for c in ds.continuous_names]
            row += [p.categorical_attrs[c] for c in ds.categorical_names]
            writer.writerow(row)


def temporal_split(
    ds: Dataset,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Per-province temporal split: earliest ``ratios[0]`` of parcels by
    appraisal date go to train; the held-out tail is split between val and
    test by a seeded shuffle.

    Date ties are broken by parcel id so the cut is deterministic. Every
    province must have at least 10 parcels.
    """
    r_train, r_val, r_test = ratios
    if not np.isclose(r_train + r_val + r_test, 1.0):
        raise ValueError("ratios must sum to 1")
    by_province: dict[str, list[LandParcel]] = {}
    for p in ds.parcels:
        by_province.setdefault(p.province, []).append(p)

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for province in sorted(by_province):
        group = sorted(by_province[province], key=lambda p: (p.appraisal_date, p.id))
        n = len(group)
        if n < 10:
            raise ValueError(
                f"province {province!r} has {n} parcels; at least 10 required for a split"
            )
        n_holdout = int(round((r_val + r_test) * n))
        for p in group[: n - n_holdout]:
            assignment[p.id] = "train"
        holdout = [p.id for p in group[n - n_holdout:]]
        rng.shuffle(holdout)
        n_val = int(round(n_holdout * r_val / (r_val + r_test))) if r_val + r_test > 0 else 0
        for pid in holdout[:n_val]:
            assignment[pid] = "val"
        for pid in holdout[n_val:]:
            assignment[pid] = "test"
    return SplitAssignment(assignment)
