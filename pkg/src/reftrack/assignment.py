"""Rectangular min-cost assignment with forbidden pairs."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

# Costs at or above this value mark pairs that may never be matched.
FORBIDDEN = 1e9


def hungarian(cost, forbidden: float = FORBIDDEN) -> dict[int, int]:
    """Minimum-cost partial matching ``row -> column``.

    Among all matchings of maximum size that avoid forbidden pairs, returns
    one of minimum total cost. Forbidden pairs are re-priced with a big-M
    larger than any sum of finite costs, so the solver first minimizes the
    number of forbidden pairs used and only then the cost.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.size == 0:
        return {}
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite; use the forbidden sentinel instead")
    bad = c >= forbidden
    if bad.all():
        return {}
    ok = c[~bad]
    span = float(ok.max() - ok.min()) if ok.size else 0.0
    big = (span + 1.0) * (min(c.shape) + 1)
    work = np.where(bad, ok.min() + big, c)
    rows, cols = linear_sum_assignment(work)
    return {int(r): int(k) for r, k in zip(rows, cols) if not bad[r, k]}


def assignment_cost(cost, assignment: dict[int, int]) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[r, k] for r, k in assignment.items()))
