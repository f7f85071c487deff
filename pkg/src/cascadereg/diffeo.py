"""Scaling-and-squaring integration of stationary velocity fields."""
from __future__ import annotations

import numpy as np

from .errors import DivergenceError
from .field import check_field, compose


def t_schedule(level: int, t0: int = 7) -> int:
    """Number of squaring steps at pyramid ``level``: ``max(t0 - level, 1)``."""
    if level < 0 or t0 < 1:
        raise ValueError(f"need level >= 0 and t0 >= 1, got level={level}, t0={t0}")
    return max(t0 - level, 1)


def integrate_svf(v: np.ndarray, steps: int):
    """Square the displacement ``v`` ``steps`` times: ``u <- u + u o (id + u)``.

    ``v`` is the displacement over the first time slice (``1 / 2**steps``),
    so a constant field comes back multiplied by ``2**steps``. Returns the
    final field twice, as ``(velocity, displacement)``: the integrated
    velocity and the displacement of the time-1 map coincide.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    u = check_field(v).copy()
    limit = float(np.sqrt(sum(n * n for n in u.shape[1:])))
    for k in range(steps):
        u = compose(u, u)
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"non-finite displacement after squaring step {k + 1}")
        peak = float(np.sqrt((u**2).sum(axis=0)).max())
        if peak > limit:
            raise DivergenceError(
                f"displacement {peak:.1f} exceeds grid diagonal {limit:.1f} after squaring step {k + 1}"
            )
    return u, u.copy()


def exp_svf(v: np.ndarray, steps: int) -> np.ndarray:
    """Time-1 displacement of the stationary velocity ``v`` (pre-scaled by ``2**-steps``)."""
    return integrate_svf(check_field(v) / 2.0**steps, steps)[0]
