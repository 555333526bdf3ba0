"""Synthetic test integrands.

The main test function is radially symmetric about the origin corner of the
unit cube with a kink on the sphere r = 0.6: a rising logistic inside the
sphere glued continuously to a decaying exponential outside.  The slope
jumps at the kink, which is what local refinement has to resolve.

:class:`NoisyWrapper` turns any deterministic function into a synthetic
Monte Carlo model: a draw returns the function value plus zero-mean
Gaussian noise of whatever variance the caller requests, and its cost is
inversely proportional to that variance, mimicking the cost/variance
trade-off of averaging real simulation output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from ..driver import RefinementConfig, RefinementMode, refine_loop
from ..grid import DomainError, MultiIndex
from ..sampling import VarianceSchedule
from .base import DeterministicModel

KINK_RADIUS = 0.6
_LOGISTIC_SCALE = 10.0
_LOGISTIC_CENTER = 0.35
_LOGISTIC_WIDTH = 0.086
_DECAY_BASE = 0.005
_LOG_DECAY = math.log(_DECAY_BASE)


def _logistic(r: float) -> float:
    return _LOGISTIC_SCALE / (math.exp((_LOGISTIC_CENTER - r) / _LOGISTIC_WIDTH) + 1.0)


_KINK_VALUE = _logistic(KINK_RADIUS)


def kink_radial(r: float) -> float:
    """Radial profile: logistic up to the kink, exponential decay beyond."""
    if r < KINK_RADIUS:
        return _logistic(r)
    return _KINK_VALUE * math.exp((r - KINK_RADIUS) * _LOG_DECAY)


def kink_radial_batch(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    inner = _LOGISTIC_SCALE / (np.exp((_LOGISTIC_CENTER - r) / _LOGISTIC_WIDTH) + 1.0)
    outer = _KINK_VALUE * np.exp((r - KINK_RADIUS) * _LOG_DECAY)
    return np.where(r < KINK_RADIUS, inner, outer)


@dataclass(frozen=True)
class KinkModel:
    """Radially symmetric integrand on [0, 1]^D with a kink at radius 0.6."""

    dimension: int

    def evaluate(self, x: Sequence[float]) -> float:
        if len(x) != self.dimension:
            raise DomainError(f"point has dimension {len(x)}, expected {self.dimension}")
        return kink_radial(math.sqrt(math.fsum(v * v for v in x)))

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dimension:
            raise DomainError(f"expected (n, {self.dimension}) array")
        return kink_radial_batch(np.sqrt(np.sum(points * points, axis=1)))

    def __call__(self, x: Sequence[float]) -> float:
        return self.evaluate(x)


class NoisyWrapper:
    """Deterministic function plus Gaussian noise of controllable variance.

    The cost of a draw is ``cost_unit_variance / variance``: the draw whose
    variance equals the schedule's root target costs one unit, and draws at
    the level-l target cost B**-l units.  With ``noise_free=True`` draws
    return the exact function value (costs still follow the schedule).
    """

    def __init__(
        self,
        inner: Callable[[Sequence[float]], float],
        schedule: VarianceSchedule,
        dimension: int,
        seed: int = 0,
        noise_free: bool = False,
        cost_unit_variance: float | None = None,
    ):
        self.inner = inner
        self.schedule = schedule
        self.dimension = dimension
        self.noise_free = noise_free
        self.cost_unit_variance = (
            schedule.target_variance(0) if cost_unit_variance is None else cost_unit_variance
        )
        self._rng = np.random.default_rng(seed)

    def cost_at_variance(self, variance: float) -> float:
        if variance < 0.0:
            raise DomainError("variance must be >= 0")
        if variance == 0.0:
            # Exact evaluations fall outside the cost model; charged nothing.
            return 0.0
        return self.cost_unit_variance / variance

    def draw_at_variance(self, x, variance: float, rng=None):
        if variance < 0.0:
            raise DomainError("variance must be >= 0")
        value = float(self.inner(x))
        if variance > 0.0 and not self.noise_free:
            gen = self._rng if rng is None else rng
            value += gen.normal(0.0, math.sqrt(variance))
            achieved = variance
        else:
            achieved = 0.0
        return value, achieved, self.cost_at_variance(variance)

    def noisy_draw(self, x, key: MultiIndex, rng=None):
        """One draw at the schedule target for the key's level; returns (value, cost)."""
        target = self.schedule.target_variance(key.total_level)
        value, _, cost = self.draw_at_variance(x, target, rng)
        return value, cost


class OracleError(RuntimeError):
    """The two independent reference methods disagree."""


def _qmc_integral(
    fn_batch: Callable[[np.ndarray], np.ndarray],
    dimension: int,
    n_points: int,
    seed: int = 20_107,
) -> float:
    sampler = qmc.Sobol(d=dimension, scramble=True, seed=seed)
    total = 0.0
    done = 0
    chunk = 1 << 19
    while done < n_points:
        take = min(chunk, n_points - done)
        pts = sampler.random(take)
        total += float(np.sum(fn_batch(pts)))
        done += take
    return total / n_points


def _sparse_grid_integral(
    fn: Callable[[Sequence[float]], float],
    dimension: int,
    tol: float,
    max_points: int,
) -> tuple[float, bool]:
    config = RefinementConfig(
        mode=RefinementMode.ASG_FIXED_VARIANCE,
        tol=tol,
        sigma0=0.0,
        max_level=40,
        max_points=max_points,
    )
    grid, report = refine_loop(DeterministicModel(fn, dimension), config)
    return report.final.integral_estimate, report.converged


def reference_integral(
    fn: Callable[[Sequence[float]], float],
    dimension: int,
    rel_tol: float = 1e-6,
    *,
    fn_batch: Callable[[np.ndarray], np.ndarray] | None = None,
    start_tol: float = 1e-3,
    qmc_points: int = 1 << 24,
    max_points: int = 4_000_000,
    seed: int = 20_107,
) -> float:
    """High-accuracy noise-free reference for the unit-cube integral of fn.

    Two independent methods must agree within rel_tol: adaptive sparse grid
    quadrature on exact evaluations, driven to successive-refinement
    self-consistency, and scrambled-Sobol quasi Monte Carlo.  The sparse
    grid value is returned; disagreement raises :class:`OracleError`.
    """
    if rel_tol < 1e-10:
        raise DomainError("rel_tol below 1e-10 is not supported")
    value = None
    tol = start_tol
    for _ in range(12):
        new_value, converged = _sparse_grid_integral(fn, dimension, tol, max_points)
        if value is not None and abs(new_value - value) <= 0.3 * rel_tol * abs(new_value):
            value = new_value
            break
        if not converged:
            raise OracleError(
                f"sparse grid reference hit the point cap before tol={tol:g} converged"
            )
        value = new_value
        tol *= 0.03
    else:
        raise OracleError("sparse grid reference did not self-converge")
    if fn_batch is None:
        fn_batch = lambda pts: np.array([fn(p) for p in pts])
    check = _qmc_integral(fn_batch, dimension, qmc_points, seed=seed)
    if abs(value - check) > rel_tol * max(abs(value), 1e-12):
        raise OracleError(
            f"reference methods disagree: sparse grid {value!r} vs QMC {check!r} "
            f"(rel_tol {rel_tol:g})"
        )
    return value


def kink_reference_integral(model: KinkModel, rel_tol: float = 1e-6, **kwargs) -> float:
    return reference_integral(
        model.evaluate,
        model.dimension,
        rel_tol,
        fn_batch=model.evaluate_batch,
        **kwargs,
    )
