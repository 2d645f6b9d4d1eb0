"""Cosine annealing with warm restarts.

The continuous step ``t`` is measured in epochs (fractional within an epoch).
Cycle ``k`` has length t0 * t_mult**k; at each restart the rate snaps back to
eta_max and decays to eta_min along a half cosine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


def cosine_lr(t_cur: float, t_i: float, eta_max: float, eta_min: float) -> float:
    """eta_min + 0.5 (eta_max - eta_min) (1 + cos(pi t_cur / t_i))."""
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * t_cur / t_i))


@dataclass(frozen=True)
class CosineWarmRestarts:
    eta_max: float = 0.025
    eta_min: float = 0.0
    t0: float = 10.0
    t_mult: float = 2.0

    def __post_init__(self):
        if self.eta_min >= self.eta_max:
            raise ValueError("eta_min must be below eta_max")
        if self.t0 <= 0 or self.t_mult < 1:
            raise ValueError("t0 must be positive and t_mult >= 1")

    def lr_at(self, t: float) -> float:
        """Learning rate at continuous step t >= 0.

        Cycles are half-open: t exactly at a restart boundary evaluates to
        eta_max (the new cycle's start).
        """
        if t < 0:
            raise ValueError("t must be non-negative")
        t_i = self.t0
        t_cur = t
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= self.t_mult
        return cosine_lr(t_cur, t_i, self.eta_max, self.eta_min)
