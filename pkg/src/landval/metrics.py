"""Evaluation metrics: AUC (two independent routes), MAPE, coverage, and the
coverage-MAPE trade-off curves swept over the similarity threshold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from landval.valuation import ValuationResult, value_all


def _check_binary(labels: np.ndarray) -> None:
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("labels must contain both classes")


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie).

    Computed from average ranks so ties get half credit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0  # average of 1-based ranks i+1..j+1
        i = j + 1
    pos_mask = labels[order] == 1
    n_pos = int(pos_mask.sum())
    n_neg = len(s) - n_pos
    rank_sum = float(ranks[pos_mask].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class RocCurve:
    """ROC points sorted from (0,0) to (1,1) plus the trapezoidal area."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_curve(scores, labels) -> RocCurve:
    """ROC sweep over distinct score thresholds, trapezoidal AUC.

    Independent of auc(); the two must agree to 1e-9.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = (labels[order] == 1).astype(np.float64)
    # Threshold boundaries sit after the last element of each tied group.
    distinct = np.nonzero(np.diff(s))[0]
    cut = np.concatenate([distinct, [len(s) - 1]])
    tps = np.cumsum(y)[cut]
    fps = (cut + 1) - tps
    n_pos = y.sum()
    n_neg = len(y) - n_pos
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    area = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, auc=area)


def mape(results: list[ValuationResult], actual_prices: dict[str, float]) -> float:
    """Mean absolute percentage error over covered parcels, as a percentage."""
    covered = [r for r in results if r.covered]
    if not covered:
        raise ValueError("no covered results to compute MAPE over")
    errs = [
        abs(r.predicted_price - actual_prices[r.parcel_id]) / actual_prices[r.parcel_id]
        for r in covered
    ]
    return 100.0 * float(np.mean(errs))


def coverage_pct(results: list[ValuationResult], denominator: str = "evaluated") -> float:
    """Share of parcels with at least one contributing neighbor, in percent.

    denominator="evaluated" divides by all evaluated parcels (default);
    "with_neighbors" divides by parcels that had any scored neighbor at all.
    """
    if not results:
        raise ValueError("no results")
    covered = sum(1 for r in results if r.covered)
    if denominator == "evaluated":
        denom = len(results)
    elif denominator == "with_neighbors":
        denom = sum(1 for r in results if r.has_neighbors)
        if denom == 0:
            return 0.0
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    return 100.0 * covered / denom


@dataclass(frozen=True)
class CoverageMapePoint:
    theta: float
    coverage_pct: float
    mape_pct: float | None  # None when nothing is covered


@dataclass(frozen=True)
class CoverageMapeCurve:
    points: list[CoverageMapePoint]

    def coverage_at_mape(self, mape_limit_pct: float) -> float | None:
        """Largest coverage among grid points with MAPE <= limit, if any."""
        ok = [
            p.coverage_pct
            for p in self.points
            if p.mape_pct is not None and p.mape_pct <= mape_limit_pct
        ]
        return max(ok) if ok else None


def default_theta_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def coverage_mape_curve(
    scored_neighbors: dict[str, list[tuple[str, float, float]]],
    actual_prices: dict[str, float],
    theta_grid,
    denominator: str = "evaluated",
) -> CoverageMapeCurve:
    """Sweep theta over the grid, valuing every parcel at each point.

    ``scored_neighbors`` maps parcel id to its (neighbor id, score, neighbor
    price) candidates, already restricted to allowed (train) appraisals.
    """
    points = []
    for theta in theta_grid:
        results = value_all(scored_neighbors, float(theta))
        cov = coverage_pct(results, denominator=denominator)
        m = mape(results, actual_prices) if any(r.covered for r in results) else None
        points.append(CoverageMapePoint(theta=float(theta), coverage_pct=cov, mape_pct=m))
    return CoverageMapeCurve(points=points)


def per_province_report(
    scored_neighbors: dict[str, list[tuple[str, float, float]]],
    actual_prices: dict[str, float],
    province_of: dict[str, str],
    theta_grid,
    denominator: str = "evaluated",
) -> dict[str, CoverageMapeCurve | None]:
    """coverage_mape_curve restricted to each province's parcels.

    Provinces present in ``province_of`` but with zero evaluated parcels map
    to None (emitted as an empty row downstream).
    """
    provinces = sorted(set(province_of.values()))
    report: dict[str, CoverageMapeCurve | None] = {}
    for prov in provinces:
        ids = [pid for pid in scored_neighbors if province_of.get(pid) == prov]
        if not ids:
            report[prov] = None
            continue
        sub = {pid: scored_neighbors[pid] for pid in ids}
        report[prov] = coverage_mape_curve(sub, actual_prices, theta_grid, denominator)
    return report
