import numpy as np
import pytest

from landval.data import Dataset, LandParcel
from datetime import date, timedelta


def make_parcel(pid, lat, lon, price, day=1, province="p1", cont=None, cat=None):
    when = date(2021, 1, 1) + timedelta(days=day - 1) if isinstance(day, int) else day
    return LandParcel(
        id=pid,
        lat=lat,
        lon=lon,
        price=price,
        appraisal_date=when,
        province=province,
        continuous_attrs=cont or {"road_width_m": 10.0},
        categorical_attrs=cat or {"land_use": "residential"},
    )


def make_dataset(parcels):
    cont = sorted(parcels[0].continuous_attrs) if parcels else []
    cat = sorted(parcels[0].categorical_attrs) if parcels else []
    ds = Dataset(
        parcels=list(parcels),
        continuous_names=cont,
        categorical_names=cat,
        categorical_vocab={},
    )
    ds.build_vocab()
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scatter_dataset(rng):
    """500 parcels scattered over a ~40 km box for index tests."""
    parcels = []
    for i in range(500):
        parcels.append(
            make_parcel(
                f"S{i:04d}",
                lat=15.0 + rng.uniform(-0.18, 0.18),
                lon=100.0 + rng.uniform(-0.18, 0.18),
                price=float(rng.uniform(1e4, 1e5)),
                day=int(rng.integers(1, 28)),
            )
        )
    return make_dataset(parcels)
