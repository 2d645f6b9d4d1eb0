import numpy as np
import pytest

from landval.ensembles import MEMBERS, EnsembleSpec, combine, tune_weights
from landval.metrics import auc


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(members=MEMBERS, weights=(0.5, 0.5, 0.5, -0.25, -0.25))
    with pytest.raises(ValueError):
        EnsembleSpec(members=MEMBERS, weights=(0.3, 0.3, 0.3, 0.3, 0.3))
    EnsembleSpec.uniform()  # valid


def test_combine_equal_weights_mean():
    spec = EnsembleSpec.uniform()
    scores = dict(zip(MEMBERS, [0.2, 0.4, 0.6, 0.8, 1.0]))
    assert combine(spec, scores) == pytest.approx(0.6)


def test_combine_one_hot_passthrough():
    w = [0.0] * 5
    w[2] = 1.0
    spec = EnsembleSpec(members=MEMBERS, weights=tuple(w))
    scores = dict(zip(MEMBERS, [0.2, 0.4, 0.6, 0.8, 1.0]))
    assert combine(spec, scores) == pytest.approx(0.6)


def test_combine_convexity(rng):
    for _ in range(100):
        w = rng.dirichlet(np.ones(5))
        spec = EnsembleSpec(members=MEMBERS, weights=tuple(w))
        s = rng.random(5)
        out = combine(spec, dict(zip(MEMBERS, s)))
        assert s.min() - 1e-12 <= out <= s.max() + 1e-12


def test_combine_rejects_out_of_range():
    spec = EnsembleSpec.uniform()
    scores = dict(zip(MEMBERS, [0.2, 0.4, 1.6, 0.8, 1.0]))
    with pytest.raises(ValueError):
        combine(spec, scores)


def test_combine_monotone_in_member_score(rng):
    spec = EnsembleSpec(members=MEMBERS, weights=(0.2, 0.2, 0.2, 0.2, 0.2))
    base = dict(zip(MEMBERS, [0.5] * 5))
    lo = combine(spec, base)
    for m in MEMBERS:
        bumped = dict(base)
        bumped[m] = 0.9
        assert combine(spec, bumped) > lo


def random_member_scores(rng, n=400):
    labels = rng.integers(0, 2, n)
    scores = {}
    for i, m in enumerate(MEMBERS):
        signal = labels * rng.uniform(0.2, 0.8) + rng.random(n) * 0.5
        scores[m] = np.clip(signal / signal.max(), 0, 1)
    return scores, labels


def test_tuned_auc_at_least_best_member(rng):
    scores, labels = random_member_scores(rng)
    spec, best = tune_weights(scores, labels, n_trials=100, seed=0)
    member_best = max(auc(scores[m], labels) for m in MEMBERS)
    assert best >= member_best - 1e-12
    assert best == pytest.approx(auc(combine(spec, scores), labels))


def test_perfect_member_wins_with_max_weight(rng):
    n = 300
    labels = rng.integers(0, 2, n)
    scores = {m: rng.random(n) for m in MEMBERS}
    scores["random_forest"] = labels.astype(float)  # exact oracle member
    spec, best = tune_weights(scores, labels, n_trials=200, seed=1)
    assert best == 1.0
    assert spec.weight_of("random_forest") == max(spec.weights)


def test_zero_trials_uniform_fallback(rng):
    scores, labels = random_member_scores(rng)
    spec, _ = tune_weights(scores, labels, n_trials=0, seed=0)
    assert spec.weights == tuple([0.2] * 5)


def test_tune_deterministic(rng):
    scores, labels = random_member_scores(rng)
    a, _ = tune_weights(scores, labels, n_trials=50, seed=7)
    b, _ = tune_weights(scores, labels, n_trials=50, seed=7)
    assert a == b


def test_single_class_labels_rejected(rng):
    scores = {m: rng.random(10) for m in MEMBERS}
    with pytest.raises(ValueError):
        tune_weights(scores, np.ones(10), n_trials=10, seed=0)


def test_spec_json_round_trip(tmp_path, rng):
    spec, _ = tune_weights(*random_member_scores(rng), n_trials=20, seed=3)
    spec.save(tmp_path / "w.json")
    back = EnsembleSpec.load(tmp_path / "w.json")
    assert back.members == spec.members
    assert np.allclose(back.weights, spec.weights)
