"""The adaptive refinement loop.

Starting from the single root node, each iteration estimates the integrand
at the newly selected nodes, computes their surpluses coarse-to-fine,
records a convergence entry, and selects the next frontier: children of
every frontier node whose weighted-surplus indicator exceeds the tolerance,
completed by the ancestors the closure invariant requires.  The loop stops
when no frontier node exceeds the tolerance, or when a safety cap trips.

Three sampling policies are supported.  MLASG lets the per-node variance
target grow with the level according to the schedule; the fixed-variance
policy samples every node to the same accuracy; the single-sample policy
takes one raw draw per node and refines non-adaptively (full sparse grid).
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Sequence, TextIO

from .grid import (
    DomainError,
    GridNode,
    MultiIndex,
    SparseGrid,
    children,
    keys_at_total_level,
    parents,
    root_index,
    sort_key,
)
from .sampling import (
    M_MAX_DEFAULT,
    M_MIN_DEFAULT,
    SampleAccumulator,
    VarianceSchedule,
    sample_to_target,
)
from .streams import node_rng, run_entropy

log = logging.getLogger(__name__)


class RefinementMode(Enum):
    MLASG = "MLASG"
    ASG_FIXED_VARIANCE = "ASG_FIXED_VARIANCE"
    FSG_SINGLE_SAMPLE = "FSG_SINGLE_SAMPLE"


@dataclass(frozen=True)
class RefinementConfig:
    """Knobs of one refinement run."""

    mode: RefinementMode
    tol: float
    c: float = 1.0
    B: float = 2.0
    sigma0: float | None = None
    max_level: int = 20
    max_points: int = 10_000_000
    m_min: int = M_MIN_DEFAULT
    m_max: int = M_MAX_DEFAULT

    def __post_init__(self):
        if self.tol <= 0.0:
            raise DomainError("tol must be > 0")
        if self.max_level < 1 or self.max_points < 1:
            raise DomainError("max_level and max_points must be >= 1")
        if self.mode is RefinementMode.MLASG:
            if self.c <= 0.0 or self.B <= 1.0:
                raise DomainError("MLASG requires c > 0 and B > 1")
        if self.mode is RefinementMode.ASG_FIXED_VARIANCE:
            if self.sigma0 is None or self.sigma0 < 0.0:
                raise DomainError("ASG_FIXED_VARIANCE requires sigma0 >= 0")

    def schedule(self) -> VarianceSchedule:
        return VarianceSchedule(c=self.c, tol=self.tol, B=self.B)


class ModelEvaluationError(RuntimeError):
    """A model failed while evaluating one node; carries the node context."""

    def __init__(self, key: MultiIndex, x: tuple[float, ...]):
        super().__init__(f"model evaluation failed at node {key.describe()}, x={x}")
        self.key = key
        self.x = x


class NodeSample(NamedTuple):
    estimate: float
    variance_of_mean: float
    sample_count: int
    cost: float
    target_met: bool


def _is_direct(model) -> bool:
    return hasattr(model, "draw_at_variance")


def _evaluate_at_variance(model, x, target_var, rng, m_min, m_max) -> NodeSample:
    if _is_direct(model):
        value, achieved, cost = model.draw_at_variance(x, target_var, rng)
        return NodeSample(value, achieved, 1, cost, True)
    acc, met = sample_to_target(
        model, x, target_var, rng=rng, m_min=m_min, m_max=m_max
    )
    return NodeSample(acc.mean, acc.variance_of_mean, acc.count, acc.cost, met)


class MlasgSampler:
    """Per-node variance target grows with the level per the schedule."""

    def __init__(self, config: RefinementConfig):
        self.schedule = config.schedule()
        self.m_min = config.m_min
        self.m_max = config.m_max

    def evaluate(self, model, x, key: MultiIndex, rng) -> NodeSample:
        target = self.schedule.target_variance(key.total_level)
        return _evaluate_at_variance(model, x, target, rng, self.m_min, self.m_max)


class FixedVarianceSampler:
    """Every node is sampled to the same variance, regardless of level."""

    def __init__(self, config: RefinementConfig):
        self.target = float(config.sigma0) ** 2
        self.m_min = config.m_min
        self.m_max = config.m_max

    def evaluate(self, model, x, key: MultiIndex, rng) -> NodeSample:
        if self.target == 0.0:
            if not _is_direct(model):
                raise DomainError(
                    "sigma0=0 needs a model with exact evaluations; "
                    "a sampling model cannot reach zero variance"
                )
            value, achieved, cost = model.draw_at_variance(x, 0.0, rng)
            return NodeSample(value, achieved, 1, cost, True)
        return _evaluate_at_variance(model, x, self.target, rng, self.m_min, self.m_max)


class SingleSampleSampler:
    """One raw draw per node; no variance control at all."""

    def __init__(self, config: RefinementConfig):
        # Synthetic models have no intrinsic single-draw accuracy; they draw
        # at sigma0**2 when given, else at the schedule's root variance.
        if config.sigma0 is not None:
            self.direct_variance = float(config.sigma0) ** 2
        else:
            self.direct_variance = config.c * config.tol**2

    def evaluate(self, model, x, key: MultiIndex, rng) -> NodeSample:
        if _is_direct(model):
            value, achieved, cost = model.draw_at_variance(
                x, self.direct_variance, rng
            )
            return NodeSample(value, achieved, 1, cost, True)
        value, cost = model.sample(x, rng)
        # A single draw allows no variance estimate; recorded as 0.
        return NodeSample(value, 0.0, 1, cost, True)


def make_sampler(config: RefinementConfig):
    if config.mode is RefinementMode.MLASG:
        return MlasgSampler(config)
    if config.mode is RefinementMode.ASG_FIXED_VARIANCE:
        return FixedVarianceSampler(config)
    return SingleSampleSampler(config)


@dataclass
class IterationRecord:
    iteration: int
    level: int
    num_points: int
    cumulative_cost: float
    integral_estimate: float
    error: float | None = None


@dataclass
class RunReport:
    """Per-iteration convergence record of one refinement run."""

    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    cap_tripped: str | None = None
    unmet_targets: int = 0
    mode: str = ""
    seed: int | None = None

    @property
    def final(self) -> IterationRecord:
        return self.iterations[-1]

    def write_csv(self, target: str | TextIO) -> None:
        own = isinstance(target, str)
        fh = open(target, "w", newline="") if own else target
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                [
                    "iteration",
                    "level",
                    "num_points",
                    "cumulative_cost",
                    "integral_estimate",
                    "error",
                ]
            )
            for rec in self.iterations:
                writer.writerow(
                    [
                        rec.iteration,
                        rec.level,
                        rec.num_points,
                        repr(rec.cumulative_cost),
                        repr(rec.integral_estimate),
                        "" if rec.error is None else repr(rec.error),
                    ]
                )
        finally:
            if own:
                fh.close()


def indicator(node: GridNode) -> float:
    """Local refinement indicator: |surplus * weight|."""
    if node.surplus is None:
        raise DomainError(f"node {node.key.describe()} has no surplus yet")
    return abs(node.surplus * node.weight)


def select_refinement(grid: SparseGrid, tol: float) -> set[MultiIndex]:
    """Children of all frontier nodes whose indicator exceeds tol.

    Only nodes at the grid's current top level are examined; an empty
    result signals convergence.
    """
    fresh: set[MultiIndex] = set()
    for key in grid.frontier_keys():
        if indicator(grid.nodes[key]) > tol:
            fresh.update(children(key))
    return fresh


def ancestor_closure(grid: SparseGrid, fresh: set[MultiIndex]) -> set[MultiIndex]:
    """The given keys plus every missing ancestor, minus nodes already present."""
    to_add: set[MultiIndex] = set()
    stack = list(fresh)
    while stack:
        key = stack.pop()
        if key in grid.nodes or key in to_add:
            continue
        to_add.add(key)
        stack.extend(parents(key))
    return to_add


def refine_loop(
    model,
    config: RefinementConfig,
    sampler=None,
    *,
    seed: int = 0,
    run_label: str = "",
    reference: float | None = None,
    workers: int = 1,
) -> tuple[SparseGrid, RunReport]:
    """Run the refinement loop for one model and one configuration.

    Node estimates come from per-node generators derived from (seed,
    run_label, node index), so the result is independent of the worker
    count used for the sampling fan-out.
    """
    dimension = model.dimension
    if sampler is None:
        sampler = make_sampler(config)
    entropy = run_entropy(seed, run_label or config.mode.value)
    grid = SparseGrid(dimension)
    report = RunReport(mode=config.mode.value, seed=seed)
    pending = [root_index(dimension)]
    cumulative_cost = 0.0
    iteration = 0

    def eval_one(key: MultiIndex) -> NodeSample:
        x = key.coords()
        rng = node_rng(entropy, key)
        try:
            return sampler.evaluate(model, x, key, rng)
        except Exception as exc:
            raise ModelEvaluationError(key, x) from exc

    while True:
        pending.sort(key=sort_key)
        if workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                samples = list(pool.map(eval_one, pending))
        else:
            samples = [eval_one(key) for key in pending]
        for key, s in zip(pending, samples):
            grid.insert(
                key,
                estimate=s.estimate,
                variance_of_mean=s.variance_of_mean,
                sample_count=s.sample_count,
                cost_spent=s.cost,
            )
            grid.compute_surplus(key)
            cumulative_cost += s.cost
            if not s.target_met:
                report.unmet_targets += 1
                log.warning(
                    "variance target unmet at node %s (achieved %.3g)",
                    key.describe(),
                    s.variance_of_mean,
                )
        integral = grid.integrate()
        report.iterations.append(
            IterationRecord(
                iteration=iteration,
                level=grid.current_level,
                num_points=len(grid),
                cumulative_cost=cumulative_cost,
                integral_estimate=integral,
                error=None if reference is None else abs(integral - reference),
            )
        )
        if config.mode is RefinementMode.FSG_SINGLE_SAMPLE:
            fresh = set(keys_at_total_level(dimension, grid.current_level + 1))
        elif grid.current_level == 0:
            # Bootstrap: level 1 is always built.  The root basis is constant,
            # so its surplus carries no information about where f varies; an
            # integrand that happens to be small at the center must not stall
            # the refinement at a single point.
            fresh = set(keys_at_total_level(dimension, 1))
        else:
            fresh = select_refinement(grid, config.tol)
        if not fresh:
            report.converged = True
            break
        if grid.current_level + 1 > config.max_level:
            report.cap_tripped = "max_level"
            break
        to_add = ancestor_closure(grid, fresh)
        if len(grid) + len(to_add) > config.max_points:
            report.cap_tripped = "max_points"
            break
        pending = list(to_add)
        iteration += 1
    if report.cap_tripped:
        log.warning("refinement stopped by %s cap", report.cap_tripped)
    return grid, report
