"""Weighted averaging of the five member similarity scores, with weights
tuned by seeded random search on the probability simplex.

The candidate set always contains the five one-hot vectors and the uniform
vector, so the tuned validation AUC can never fall below the best single
member's.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from landval.metrics import auc

MEMBERS = ("dl_small", "dl_large", "extra_trees", "random_forest", "rf_on_latent")


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[str, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise ValueError("one weight per member required")
        w = np.asarray(self.weights)
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    @classmethod
    def uniform(cls, members: tuple[str, ...] = MEMBERS) -> "EnsembleSpec":
        n = len(members)
        return cls(members=members, weights=tuple([1.0 / n] * n))

    def weight_of(self, member: str) -> float:
        return self.weights[self.members.index(member)]

    def to_json(self) -> dict:
        return {"weights": {m: w for m, w in zip(self.members, self.weights)}}

    @classmethod
    def from_json(cls, obj: dict) -> "EnsembleSpec":
        items = obj["weights"]
        members = tuple(sorted(items, key=lambda m: MEMBERS.index(m) if m in MEMBERS else len(MEMBERS)))
        return cls(members=members, weights=tuple(items[m] for m in members))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def combine(spec: EnsembleSpec, member_scores: dict[str, np.ndarray] | dict[str, float]):
    """Weighted average of member scores; scores must lie in [0, 1]."""
    total = None
    for m, w in zip(spec.members, spec.weights):
        s = np.asarray(member_scores[m], dtype=np.float64)
        if (s < 0).any() or (s > 1).any():
            raise ValueError(f"member {m} has scores outside [0, 1]")
        total = w * s if total is None else total + w * s
    return total


def tune_weights(
    member_val_scores: dict[str, np.ndarray],
    val_labels: np.ndarray,
    n_trials: int = 500,
    seed: int = 0,
    members: tuple[str, ...] = MEMBERS,
) -> tuple[EnsembleSpec, float]:
    """Search the simplex for the weights maximizing validation AUC.

    Candidates: each one-hot, the uniform vector, then n_trials flat-Dirichlet
    samples. Strict improvement wins, so ties resolve to the earliest
    candidate. n_trials <= 0 falls back to uniform weights without a search.
    Returns (spec, best validation AUC).
    """
    labels = np.asarray(val_labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("validation labels contain a single class")
    if n_trials <= 0:
        spec = EnsembleSpec.uniform(members)
        return spec, auc(combine(spec, member_val_scores), labels)

    k = len(members)
    score_matrix = np.stack([np.asarray(member_val_scores[m], dtype=np.float64) for m in members])
    candidates = [np.eye(k)[i] for i in range(k)]
    candidates.append(np.full(k, 1.0 / k))
    rng = np.random.default_rng(seed)
    candidates.extend(rng.dirichlet(np.ones(k), size=n_trials))

    best_w = None
    best_auc = -np.inf
    for w in candidates:
        combined = w @ score_matrix
        a = auc(combined, labels)
        if a > best_auc:
            best_auc = a
            best_w = w
    spec = EnsembleSpec(members=members, weights=tuple(float(x) for x in best_w))
    return spec, float(best_auc)
