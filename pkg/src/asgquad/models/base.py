"""Model contracts used by the refinement driver.

A model exposes a ``dimension`` and one of two sampling surfaces:

* ``sample(x, rng) -> (value, cost)`` draws one unbiased random sample of
  the integrand at x; accuracy control happens through repetition.
* ``draw_at_variance(x, variance, rng) -> (value, achieved_variance, cost)``
  produces a single estimate of requested variance directly; used by
  synthetic models whose noise level is free to choose.

Models of the second kind may also report ``variance_hint``, an upper bound
on the single-draw variance, which sizes the first sampling batch.
"""

from __future__ import annotations

from typing import Callable, Sequence


class DeterministicModel:
    """Exact, noise-free evaluations of a plain function.

    Draws ignore the requested variance and cost nothing; useful as the
    reference integrand for oracles and noise-free refinement runs.
    """

    def __init__(self, fn: Callable[[Sequence[float]], float], dimension: int):
        self.fn = fn
        self.dimension = dimension

    def draw_at_variance(self, x, variance, rng=None):
        return float(self.fn(x)), 0.0, 0.0
