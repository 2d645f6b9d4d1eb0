"""Great-circle distances and radius queries over parcel coordinates.

A flat lat/lon grid accelerates fixed-radius neighbor lookups; results are
always exact because candidates from the grid are re-filtered with the
haversine distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from landval.data import Dataset, LandParcel

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat * sin_dlat + math.cos(lat1) * math.cos(lat2) * sin_dlon * sin_dlon
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass
class SpatialIndex:
    """Uniform lat/lon grid over a dataset, immutable after build.

    Cells are sized so a radius query only needs the cells overlapping the
    query's bounding box in degrees. Queries against parcels outside the
    indexed bounding box are allowed.
    """

    dataset: Dataset
    cell_deg: float
    _cells: dict[tuple[int, int], list[str]] = field(repr=False, default_factory=dict)

    @classmethod
    def build(cls, dataset: Dataset, cell_km: float = 3.0) -> "SpatialIndex":
        if cell_km <= 0:
            raise ValueError("cell_km must be positive")
        cell_deg = cell_km / KM_PER_DEG_LAT
        idx = cls(dataset=dataset, cell_deg=cell_deg)
        for p in dataset.parcels:
            idx._cells.setdefault(idx._cell_of(p.lat, p.lon), []).append(p.id)
        return idx

    def _cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        return (math.floor(lat / self.cell_deg), math.floor(lon / self.cell_deg))

    def neighbors_within(
        self, p: LandParcel, radius_km: float
    ) -> list[tuple[str, float]]:
        """All indexed parcels within radius_km of p, excluding p itself.

        Sorted ascending by (distance, parcel id).
        """
        if radius_km <= 0:
            raise ValueError("radius_km must be positive")
        dlat = radius_km / KM_PER_DEG_LAT
        # Longitude extent of the radius disc widens toward the poles; use the
        # most extreme latitude the disc can reach.
        edge_lat = min(abs(p.lat) + dlat, 89.9)
        dlon = radius_km / (KM_PER_DEG_LAT * math.cos(math.radians(edge_lat)))
        lo = self._cell_of(p.lat - dlat, p.lon - dlon)
        hi = self._cell_of(p.lat + dlat, p.lon + dlon)
        by_id = self.dataset.by_id
        out: list[tuple[str, float]] = []
        for ci in range(lo[0], hi[0] + 1):
            for cj in range(lo[1], hi[1] + 1):
                for pid in self._cells.get((ci, cj), ()):
                    if pid == p.id:
                        continue
                    q = by_id[pid]
                    d = haversine_km((p.lat, p.lon), (q.lat, q.lon))
                    if d <= radius_km:
                        out.append((pid, d))
        out.sort(key=lambda t: (t[1], t[0]))
        return out


def neighbors_within(
    idx: SpatialIndex, p: LandParcel, radius_km: float
) -> list[tuple[str, float]]:
    return idx.neighbors_within(p, radius_km)


def brute_force_within(
    dataset: Dataset, p: LandParcel, radius_km: float
) -> list[tuple[str, float]]:
    """O(n) reference scan used as the oracle for the grid index."""
    out = [
        (q.id, haversine_km((p.lat, p.lon), (q.lat, q.lon)))
        for q in dataset.parcels
        if q.id != p.id
    ]
    out = [(pid, d) for pid, d in out if d <= radius_km]
    out.sort(key=lambda t: (t[1], t[0]))
    return out
