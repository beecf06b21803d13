"""Finite-difference validation of the hand-derived gradients."""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .model import Batch, PointerGenerator


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_group: Dict[str, float]
    coords_checked: int

    def worst_group(self) -> str:
        return max(self.per_group, key=self.per_group.get)


def gradient_check(
    model: PointerGenerator,
    batch: Batch,
    epsilon: float = 1e-5,
    coords_per_group: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences
    (f(x+eps) - f(x-eps)) / 2 eps on randomly sampled coordinates of every
    parameter group.

    Relative error uses a small absolute floor in the denominator so that
    coordinates with near-zero gradient (where the difference quotient is
    pure float roundoff) do not dominate.
    """
    if model.config.precision != "double":
        raise ValueError("gradient checks need a double-precision model")
    rng = rng or np.random.default_rng(0)

    loss, grads = model.loss_and_grads(batch, train=False)
    if not np.isfinite(loss):
        raise ValueError("loss is not finite")

    per_group: Dict[str, float] = {}
    total = 0
    for name in sorted(model.params):
        arr = model.params[name]
        n = arr.size
        k = min(coords_per_group, n)
        idx = rng.choice(n, size=k, replace=False)
        flat = arr.reshape(-1)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            plus = model.loss(batch)
            flat[j] = orig - epsilon
            minus = model.loss(batch)
            flat[j] = orig
            fd = (plus - minus) / (2.0 * epsilon)
            g = grads[name].reshape(-1)[j]
            denom = max(abs(g), abs(fd), 1e-6)
            worst = max(worst, abs(g - fd) / denom)
        per_group[name] = worst
        total += k
    return GradCheckResult(
        max_rel_error=max(per_group.values()),
        per_group=per_group,
        coords_checked=total,
    )
