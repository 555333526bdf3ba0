"""Experiment harness: strategy comparison runs and tolerance sweeps.

Builds one model instance per (mode, seed) cell with disjoint random
streams, runs the refinement loop, and collects the per-iteration records
into a comparison report with per-mode medians.  All outputs are CSV/JSON
written atomically; identical configurations and seeds produce byte
identical files regardless of the worker count.
"""

from __future__ import annotations

import json
import math
import os
import statistics
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .config import ExperimentConfig
from .driver import RefinementConfig, RefinementMode, RunReport, refine_loop
from .grid import DomainError, SparseGrid, save_checkpoint
from .models.analytic import KinkModel, NoisyWrapper, reference_integral
from .models.base import DeterministicModel
from .models.kmc import CoOxidationModel
from .sampling import VarianceSchedule


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_model(config: ExperimentConfig, mode_cfg: RefinementConfig, seed: int):
    """Instantiate the configured model for one run cell."""
    params = config.model_params
    if config.model in ("co-oxidation", "co-oxidation-13"):
        return CoOxidationModel(
            num_sites=int(params.get("num_sites", 20)),
            relax_steps=int(params.get("relax_steps", 100_000)),
            average_steps=int(params.get("average_steps", 100_000)),
            extended=config.model == "co-oxidation-13",
        )
    if config.model == "kink":
        inner = KinkModel(config.dimension).evaluate
    elif config.model == "constant":
        value = float(params.get("value", 0.0))
        inner = lambda x, _v=value: _v
    else:
        raise DomainError(f"unknown model {config.model!r}")
    if mode_cfg.mode is RefinementMode.ASG_FIXED_VARIANCE and mode_cfg.sigma0 == 0.0:
        return DeterministicModel(inner, config.dimension)
    schedule = VarianceSchedule(c=mode_cfg.c, tol=mode_cfg.tol, B=mode_cfg.B)
    cost_unit = params.get("cost_unit_variance")
    if cost_unit is None:
        cost_unit = _cost_unit_variance(config)
    return NoisyWrapper(
        inner,
        schedule,
        dimension=config.dimension,
        noise_free=False,
        cost_unit_variance=float(cost_unit),
    )


def _cost_unit_variance(config: ExperimentConfig) -> float:
    """Common cost unit for synthetic models: one unit buys a draw at the
    root target variance of the first multilevel mode (first mode otherwise),
    so costs are comparable across the modes of one experiment."""
    for _, mode_cfg in config.modes:
        if mode_cfg.mode is RefinementMode.MLASG:
            return mode_cfg.c * mode_cfg.tol**2
    for _, mode_cfg in config.modes:
        if mode_cfg.sigma0:
            return float(mode_cfg.sigma0) ** 2
        return mode_cfg.c * mode_cfg.tol**2
    raise DomainError("no modes configured")


def resolve_reference(config: ExperimentConfig, cache_path: Path | None = None) -> float | None:
    """Numeric reference as configured; 'oracle' resolves (and caches) the
    two-method high-accuracy integral for the analytic models."""
    if config.reference is None:
        return None
    if isinstance(config.reference, float):
        return config.reference
    if config.model == "constant":
        return float(config.model_params.get("value", 0.0))
    if config.model != "kink":
        raise DomainError(f"no oracle available for model {config.model!r}")
    rel_tol = float(config.model_params.get("oracle_rel_tol", 1e-6 if config.dimension <= 3 else 1e-3))
    cache_key = f"kink:d={config.dimension}:rel_tol={rel_tol:g}"
    cache: dict[str, float] = {}
    if cache_path is not None and cache_path.exists():
        cache = json.loads(cache_path.read_text())
        if cache_key in cache:
            return cache[cache_key]
    model = KinkModel(config.dimension)
    value = reference_integral(
        model.evaluate, config.dimension, rel_tol, fn_batch=model.evaluate_batch
    )
    if cache_path is not None:
        cache[cache_key] = value
        _write_atomic(cache_path, json.dumps(cache, indent=2, sort_keys=True) + "\n")
    return value


@dataclass
class ComparisonReport:
    """All runs of one experiment plus per-mode aggregates."""

    reference: float | None
    runs: dict[tuple[str, int], RunReport] = field(default_factory=dict)
    grids: dict[tuple[str, int], SparseGrid] = field(default_factory=dict)

    def mode_labels(self) -> list[str]:
        return sorted({label for label, _ in self.runs})

    def seeds_for(self, label: str) -> list[int]:
        return sorted(seed for lab, seed in self.runs if lab == label)

    def aggregates(self) -> dict[str, dict[str, float | None]]:
        out: dict[str, dict[str, float | None]] = {}
        for label in self.mode_labels():
            finals = [self.runs[(label, s)].final for s in self.seeds_for(label)]
            errors = [rec.error for rec in finals if rec.error is not None]
            out[label] = {
                "final_points_median": statistics.median(r.num_points for r in finals),
                "final_cost_median": statistics.median(r.cumulative_cost for r in finals),
                "final_error_median": statistics.median(errors) if errors else None,
                "final_integral_median": statistics.median(
                    r.integral_estimate for r in finals
                ),
            }
        return out

    def to_json(self) -> str:
        payload = {
            "reference": self.reference,
            "aggregates": self.aggregates(),
            "runs": {
                f"{label}:{seed}": {
                    "converged": rep.converged,
                    "cap_tripped": rep.cap_tripped,
                    "unmet_targets": rep.unmet_targets,
                    "final_points": rep.final.num_points,
                    "final_cost": rep.final.cumulative_cost,
                    "final_integral": rep.final.integral_estimate,
                    "final_error": rep.final.error,
                }
                for (label, seed), rep in sorted(self.runs.items())
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def run_experiment(
    config: ExperimentConfig,
    *,
    threads: int | None = None,
    keep_grids: bool = True,
    write_outputs: bool = True,
) -> ComparisonReport:
    """Execute every (mode, seed) cell and write reports.

    Individual run failures are recorded and the remaining cells proceed;
    an oracle failure aborts the whole experiment.
    """
    threads = threads or config.threads
    out_dir = config.output_dir
    reference = resolve_reference(
        config, cache_path=(out_dir / "oracle_cache.json") if write_outputs else None
    )
    report = ComparisonReport(reference=reference)
    cells = [
        (label, mode_cfg, seed) for label, mode_cfg in config.modes for seed in config.seeds
    ]

    failures: dict[tuple[str, int], str] = {}

    def run_cell(cell):
        label, mode_cfg, seed = cell
        model = build_model(config, mode_cfg, seed)
        return refine_loop(
            model, mode_cfg, seed=seed, run_label=label, reference=reference
        )

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(run_cell, cell): cell for cell in cells}
            results = {}
            for fut, cell in futures.items():
                label, _, seed = cell
                try:
                    results[(label, seed)] = fut.result()
                except Exception as exc:  # run failures are recorded, not fatal
                    failures[(label, seed)] = repr(exc)
    else:
        results = {}
        for cell in cells:
            label, _, seed = cell
            try:
                results[(label, seed)] = run_cell(cell)
            except Exception as exc:
                failures[(label, seed)] = repr(exc)
    for (label, seed), (grid, run_report) in sorted(results.items()):
        report.runs[(label, seed)] = run_report
        if keep_grids:
            report.grids[(label, seed)] = grid
    if write_outputs:
        for (label, seed), run_report in sorted(report.runs.items()):
            _write_run_csv(out_dir / f"run_{label}_{seed}.csv", run_report)
            grid = report.grids.get((label, seed))
            if grid is not None:
                _write_grid(out_dir / f"grid_{label}_{seed}.txt", grid)
        summary = report.to_json()
        if failures:
            payload = json.loads(summary)
            payload["failures"] = {f"{l}:{s}": msg for (l, s), msg in sorted(failures.items())}
            summary = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        _write_atomic(out_dir / "summary.json", summary)
    if failures and not report.runs:
        raise RuntimeError(f"all runs failed: {failures}")
    return report


def _write_run_csv(path: Path, run_report: RunReport) -> None:
    import io

    buf = io.StringIO()
    run_report.write_csv(buf)
    _write_atomic(path, buf.getvalue())


def _write_grid(path: Path, grid: SparseGrid) -> None:
    import io

    buf = io.StringIO()
    save_checkpoint(grid, buf)
    _write_atomic(path, buf.getvalue())


def emit_figures_data(report: ComparisonReport, out: Path) -> list[Path]:
    """Per-run CSVs behind the standard plots: error vs points, error vs
    cost, and the grid point scatter (coordinates plus level)."""
    out = Path(out)
    written = []
    for (label, seed), rep in sorted(report.runs.items()):
        lines = ["num_points,error"]
        for rec in rep.iterations:
            lines.append(f"{rec.num_points},{'' if rec.error is None else repr(rec.error)}")
        p = out / f"fig_error_vs_points_{label}_{seed}.csv"
        _write_atomic(p, "\n".join(lines) + "\n")
        written.append(p)
        lines = ["cumulative_cost,error"]
        for rec in rep.iterations:
            lines.append(
                f"{rec.cumulative_cost!r},{'' if rec.error is None else repr(rec.error)}"
            )
        p = out / f"fig_error_vs_cost_{label}_{seed}.csv"
        _write_atomic(p, "\n".join(lines) + "\n")
        written.append(p)
        grid = report.grids.get((label, seed))
        if grid is not None:
            header = ",".join(f"x{d}" for d in range(grid.dimension)) + ",level"
            lines = [header]
            for key in grid.sorted_keys():
                coords = ",".join(repr(c) for c in grid.nodes[key].coords)
                lines.append(f"{coords},{key.total_level}")
            p = out / f"fig_grid_{label}_{seed}.csv"
            _write_atomic(p, "\n".join(lines) + "\n")
            written.append(p)
    return written


def interpolation_error_1norm(
    grid: SparseGrid,
    fn: Callable[[Sequence[float]], float],
    *,
    grid_n: int = 160,
    qmc_points: int = 1_000_000,
    seed: int = 917,
) -> float:
    """Mean absolute difference between the interpolant and a reference
    function: midpoint sampling on a fine full grid in 2D, scrambled-Sobol
    sampling otherwise."""
    d = grid.dimension
    if d == 2:
        centers = (np.arange(grid_n) + 0.5) / grid_n
        total = 0.0
        for x0 in centers:
            for x1 in centers:
                point = (float(x0), float(x1))
                total += abs(grid.interpolate(point) - fn(point))
        return total / (grid_n * grid_n)
    sampler = qmc.Sobol(d=d, scramble=True, seed=seed)
    total = 0.0
    done = 0
    while done < qmc_points:
        take = min(1 << 16, qmc_points - done)
        for row in sampler.random(take):
            point = tuple(float(v) for v in row)
            total += abs(grid.interpolate(point) - fn(point))
        done += take
    return total / qmc_points


@dataclass
class SweepRow:
    sigma0: float
    tol: float
    seed: int
    error_1norm: float
    num_points: int
    cumulative_cost: float
    cap_tripped: str | None


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)

    def median_error(self, sigma0: float, tol: float) -> float:
        errs = [r.error_1norm for r in self.rows if r.sigma0 == sigma0 and r.tol == tol]
        if not errs:
            raise KeyError((sigma0, tol))
        return statistics.median(errs)

    def to_csv(self) -> str:
        lines = ["sigma0,tol,seed,error_1norm,num_points,cumulative_cost,cap_tripped"]
        for r in self.rows:
            lines.append(
                f"{r.sigma0!r},{r.tol!r},{r.seed},{r.error_1norm!r},"
                f"{r.num_points},{r.cumulative_cost!r},{r.cap_tripped or ''}"
            )
        return "\n".join(lines) + "\n"


def sweep_tolerance(
    config: ExperimentConfig,
    tols: Sequence[float],
    sigma0s: Sequence[float],
    *,
    max_level: int = 20,
    max_points: int = 150_000,
    validation_grid_n: int = 160,
    write_outputs: bool = True,
) -> SweepReport:
    """Interpolation-quality sweep over thresholds and noise levels.

    For each (sigma0, tol) a multilevel run with the root standard
    deviation pinned at sigma0 is performed per seed (sigma0 = 0 runs the
    noise-free adaptive reference instead), and the interpolant is scored
    against the exact function in the 1-norm.
    """
    if list(tols) != sorted(tols, reverse=True):
        raise DomainError("tols must be in descending order")
    if config.model != "kink":
        raise DomainError("the tolerance sweep is defined for the analytic model")
    exact = KinkModel(config.dimension)
    report = SweepReport()
    for sigma0 in sigma0s:
        for tol in tols:
            if sigma0 == 0.0:
                mode_cfg = RefinementConfig(
                    mode=RefinementMode.ASG_FIXED_VARIANCE,
                    tol=tol,
                    sigma0=0.0,
                    max_level=max_level,
                    max_points=max_points,
                )
            else:
                schedule = VarianceSchedule.from_sigma0(sigma0, tol)
                mode_cfg = RefinementConfig(
                    mode=RefinementMode.MLASG,
                    tol=tol,
                    c=schedule.c,
                    B=schedule.B,
                    max_level=max_level,
                    max_points=max_points,
                )
            for seed in config.seeds:
                if sigma0 == 0.0:
                    model = DeterministicModel(exact.evaluate, config.dimension)
                else:
                    model = NoisyWrapper(
                        exact.evaluate,
                        VarianceSchedule.from_sigma0(sigma0, tol),
                        dimension=config.dimension,
                    )
                grid, run_report = refine_loop(
                    model,
                    mode_cfg,
                    seed=seed,
                    run_label=f"sweep:{sigma0:g}:{tol:g}",
                )
                err = interpolation_error_1norm(
                    grid, exact.evaluate, grid_n=validation_grid_n
                )
                report.rows.append(
                    SweepRow(
                        sigma0=sigma0,
                        tol=tol,
                        seed=seed,
                        error_1norm=err,
                        num_points=run_report.final.num_points,
                        cumulative_cost=run_report.final.cumulative_cost,
                        cap_tripped=run_report.cap_tripped,
                    )
                )
    if write_outputs:
        _write_atomic(config.output_dir / "sweep.csv", report.to_csv())
    return report
