"""Similarity-weighted price prediction from scored neighbors.

Neighbors scoring at or above the threshold contribute their appraisal price,
weighted by the raw similarity score. Callers are responsible for restricting
candidate neighbors to train-split appraisals when valuing val/test parcels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class ValuationResult:
    parcel_id: str
    covered: bool
    predicted_price: float | None
    # (neighbor id, score, neighbor price) for every contributor
    contributors: list[tuple[str, float, float]] = field(default_factory=list)
    theta: float = 0.0
    has_neighbors: bool = False


def value_parcel(
    parcel_id: str,
    scored_neighbors: list[tuple[str, float, float]],
    theta: float,
) -> ValuationResult:
    """Weighted-average price over neighbors with score >= theta.

    ``scored_neighbors`` holds (neighbor id, similarity score, neighbor
    price). Returns covered=False with no price when nothing clears theta.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    for nid, score, price in scored_neighbors:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score for neighbor {nid} outside [0, 1]: {score}")
        if price <= 0:
            raise ValueError(f"neighbor {nid} has non-positive price")
    contributors = [(nid, s, p) for nid, s, p in scored_neighbors if s >= theta]
    total = sum(s for _, s, _ in contributors)
    if not contributors or total <= 0.0:
        return ValuationResult(
            parcel_id=parcel_id,
            covered=False,
            predicted_price=None,
            contributors=[],
            theta=theta,
            has_neighbors=bool(scored_neighbors),
        )
    predicted = sum(s * p for _, s, p in contributors) / total
    return ValuationResult(
        parcel_id=parcel_id,
        covered=True,
        predicted_price=predicted,
        contributors=contributors,
        theta=theta,
        has_neighbors=True,
    )


def value_all(
    scored_neighbors: dict[str, list[tuple[str, float, float]]],
    theta: float,
) -> list[ValuationResult]:
    """value_parcel over every parcel, ordered by parcel id."""
    return [
        value_parcel(pid, scored_neighbors[pid], theta)
        for pid in sorted(scored_neighbors)
    ]


def write_results_csv(
    results: list[ValuationResult],
    actual_prices: dict[str, float],
    path: str | Path,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["parcel_id", "covered", "predicted_price", "actual_price", "n_contributors", "theta"])
        for r in results:
            w.writerow(
                [
                    r.parcel_id,
                    int(r.covered),
                    f"{r.predicted_price:.6f}" if r.covered else "",
                    f"{actual_prices[r.parcel_id]:.6f}",
                    len(r.contributors),
                    f"{r.theta:.4f}",
                ]
            )
