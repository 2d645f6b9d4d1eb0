"""Finite-difference validation of the analytic backward pass.

Runs in float64 with dropout off and the normalizer frozen; any stochastic
path would make the comparison meaningless, so a training-mode model with
active dropout is reported as non-deterministic instead of checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from landval.neural.model import Batch, SimilarityNet


@dataclass
class GradCheckReport:
    max_rel_error: float | None
    n_checked: int = 0
    non_deterministic: bool = False
    by_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.non_deterministic and self.max_rel_error is not None


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def _sample_coords(
    params: dict[str, np.ndarray], n_params: int, rng: np.random.Generator
) -> list[tuple[str, int]]:
    """Round-robin over tensors so every layer contributes coordinates."""
    names = sorted(params)
    pools = {k: rng.permutation(params[k].size) for k in names}
    taken = {k: 0 for k in names}
    coords: list[tuple[str, int]] = []
    while len(coords) < n_params:
        progressed = False
        for k in names:
            if len(coords) >= n_params:
                break
            if taken[k] < params[k].size:
                coords.append((k, int(pools[k][taken[k]])))
                taken[k] += 1
                progressed = True
        if not progressed:
            break
    return coords


def gradient_check(
    model: SimilarityNet,
    batch: Batch,
    labels: np.ndarray,
    n_params: int = 64,
    h: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences on a random
    parameter subset. Returns the max relative error and a per-tensor map."""
    if model.training and model.cfg.dropout > 0.0:
        return GradCheckReport(max_rel_error=None, non_deterministic=True)

    m = model.astype("float64")
    m.eval_mode()
    batch64 = Batch(
        tiles_p=batch.tiles_p.astype(np.float64),
        tiles_n=batch.tiles_n.astype(np.float64),
        cat=batch.cat,
        cont=batch.cont.astype(np.float64),
    )
    labels = np.asarray(labels, dtype=np.float64)

    _, grads, _ = m.loss_and_grads(batch64, labels)
    rng = np.random.default_rng(seed)
    # Frozen tensors receive no analytic gradient, so they are not checked.
    frozen = m.frozen_param_names()
    checkable = {k: v for k, v in m.params.items() if k not in frozen}
    coords = _sample_coords(checkable, n_params, rng)

    max_err = 0.0
    by_tensor: dict[str, float] = {}
    for name, flat in coords:
        p = m.params[name]
        orig = p.flat[flat]
        p.flat[flat] = orig + h
        loss_plus = m.loss_on_batch(batch64, labels)
        p.flat[flat] = orig - h
        loss_minus = m.loss_on_batch(batch64, labels)
        p.flat[flat] = orig
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        err = _rel_error(float(grads[name].flat[flat]), numeric)
        max_err = max(max_err, err)
        by_tensor[name] = max(by_tensor.get(name, 0.0), err)
    return GradCheckReport(max_rel_error=max_err, n_checked=len(coords), by_tensor=by_tensor)
