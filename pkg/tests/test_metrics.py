import numpy as np
import pytest

from landval.metrics import (
    CoverageMapeCurve,
    CoverageMapePoint,
    auc,
    coverage_mape_curve,
    coverage_pct,
    default_theta_grid,
    mape,
    per_province_report,
    roc_curve,
)
from landval.valuation import ValuationResult, value_all


def test_auc_perfect_ranking():
    assert auc([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0]) == 1.0


def test_auc_three_quarters():
    assert auc([0.9, 0.8, 0.4, 0.3], [1, 0, 1, 0]) == 0.75


def test_auc_all_ties_half():
    assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_auc_equals_trapezoid_on_1000_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(3, 201))
        # mix of continuous scores and heavy ties
        if rng.random() < 0.5:
            scores = rng.random(n)
        else:
            scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        a = auc(scores, labels)
        r = roc_curve(scores, labels)
        assert abs(a - r.auc) < 1e-9


def test_roc_curve_endpoints_and_monotonicity(rng):
    scores = rng.random(150)
    labels = rng.integers(0, 2, 150)
    labels[0], labels[1] = 0, 1
    curve = roc_curve(scores, labels)
    assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
    assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
    assert (np.diff(curve.fpr) >= 0).all()
    assert (np.diff(curve.tpr) >= 0).all()


def test_auc_invariant_under_monotone_transform(rng):
    scores = rng.choice(np.round(np.linspace(0.001, 0.999, 999), 3), size=200)
    labels = rng.integers(0, 2, 200)
    labels[:2] = [0, 1]
    assert auc(scores, labels) == auc(scores**3, labels)


def result(pid, pred, covered=True):
    return ValuationResult(parcel_id=pid, covered=covered,
                           predicted_price=pred if covered else None,
                           contributors=[("n", 1.0, pred)] if covered else [],
                           has_neighbors=covered)


def test_mape_simple():
    assert mape([result("a", 110.0)], {"a": 100.0}) == pytest.approx(10.0)


def test_mape_exact_predictions():
    res = [result("a", 100.0), result("b", 55.0)]
    assert mape(res, {"a": 100.0, "b": 55.0}) == 0.0


def test_mape_two_parcels():
    res = [result("a", 90.0), result("b", 120.0)]
    assert mape(res, {"a": 100.0, "b": 100.0}) == pytest.approx(15.0)


def test_mape_requires_covered():
    with pytest.raises(ValueError):
        mape([result("a", None, covered=False)], {"a": 100.0})


def test_mape_scale_invariant(rng):
    res = [result(f"p{i}", float(rng.uniform(50, 150))) for i in range(20)]
    actual = {f"p{i}": float(rng.uniform(50, 150)) for i in range(20)}
    scaled = [result(r.parcel_id, r.predicted_price * 7.0) for r in res]
    actual7 = {k: v * 7.0 for k, v in actual.items()}
    assert mape(res, actual) == pytest.approx(mape(scaled, actual7))


def test_coverage_pct_extremes():
    all_cov = [result(f"p{i}", 1.0) for i in range(4)]
    assert coverage_pct(all_cov) == 100.0
    none_cov = [result(f"p{i}", None, covered=False) for i in range(4)]
    assert coverage_pct(none_cov) == 0.0


def test_coverage_pct_quarter():
    res = [result(f"c{i}", 1.0) for i in range(2)] + [
        result(f"u{i}", None, covered=False) for i in range(6)
    ]
    assert coverage_pct(res) == 25.0


def test_coverage_pct_alternative_denominator():
    res = [
        ValuationResult("a", True, 1.0, [("n", 1.0, 1.0)], 0.5, has_neighbors=True),
        ValuationResult("b", False, None, [], 0.5, has_neighbors=True),
        ValuationResult("c", False, None, [], 0.5, has_neighbors=False),
    ]
    assert coverage_pct(res, "evaluated") == pytest.approx(100.0 / 3.0)
    assert coverage_pct(res, "with_neighbors") == 50.0


def synthetic_neighbors(rng, n_parcels=60, n_neighbors=8):
    neighbors = {}
    actual = {}
    for i in range(n_parcels):
        pid = f"p{i:03d}"
        actual[pid] = float(rng.uniform(100, 200))
        lst = []
        for j in range(int(rng.integers(0, n_neighbors))):
            price = actual[pid] * float(rng.uniform(0.7, 1.3))
            lst.append((f"n{i}_{j}", float(rng.random()), price))
        neighbors[pid] = lst
    return neighbors, actual


def test_curve_single_point_grid_maximal_coverage(rng):
    neighbors, actual = synthetic_neighbors(rng)
    curve = coverage_mape_curve(neighbors, actual, [0.0])
    assert len(curve.points) == 1
    with_nb = sum(1 for v in neighbors.values() if v)
    assert curve.points[0].coverage_pct == pytest.approx(100.0 * with_nb / len(neighbors))


def test_curve_coverage_non_increasing(rng):
    neighbors, actual = synthetic_neighbors(rng)
    curve = coverage_mape_curve(neighbors, actual, default_theta_grid(101))
    cov = [p.coverage_pct for p in curve.points]
    assert all(a >= b - 1e-12 for a, b in zip(cov, cov[1:]))


def test_oracle_scores_bound_mape_by_label_rule(rng):
    # score 1 for neighbors within 20% of the primary price, 0 otherwise
    neighbors = {}
    actual = {}
    for i in range(40):
        pid = f"p{i}"
        actual[pid] = float(rng.uniform(100, 200))
        lst = []
        for j in range(6):
            price = actual[pid] * float(rng.uniform(0.5, 1.5))
            score = 1.0 if abs(price - actual[pid]) / actual[pid] <= 0.2 else 0.0
            lst.append((f"n{i}_{j}", score, price))
        neighbors[pid] = lst
    curve = coverage_mape_curve(neighbors, actual, [0.5])
    assert curve.points[0].mape_pct is not None
    assert curve.points[0].mape_pct <= 20.0


def test_coverage_at_mape_picks_largest():
    curve = CoverageMapeCurve(points=[
        CoverageMapePoint(0.0, 90.0, 25.0),
        CoverageMapePoint(0.5, 70.0, 18.0),
        CoverageMapePoint(0.8, 40.0, 12.0),
        CoverageMapePoint(1.0, 0.0, None),
    ])
    assert curve.coverage_at_mape(20.0) == 70.0
    assert curve.coverage_at_mape(10.0) is None


def test_per_province_report_single_province_equals_global(rng):
    neighbors, actual = synthetic_neighbors(rng, n_parcels=30)
    province_of = {pid: "solo" for pid in neighbors}
    grid = default_theta_grid(11)
    report = per_province_report(neighbors, actual, province_of, grid)
    assert list(report) == ["solo"]
    global_curve = coverage_mape_curve(neighbors, actual, grid)
    assert report["solo"] == global_curve


def test_per_province_report_rows_and_empty_province(rng):
    neighbors, actual = synthetic_neighbors(rng, n_parcels=20)
    province_of = {pid: ("a" if i % 2 else "b") for i, pid in enumerate(neighbors)}
    province_of["ghost_parcel"] = "empty_prov"
    report = per_province_report(neighbors, actual, province_of, default_theta_grid(5))
    assert sorted(report) == ["a", "b", "empty_prov"]
    assert report["empty_prov"] is None
    assert report["a"] is not None and report["b"] is not None
