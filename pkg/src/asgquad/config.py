"""Experiment configuration files.

INI format with one ``[experiment]`` section, an optional ``[model]``
section for model parameters, and one ``[mode.<label>]`` section per
refinement strategy to run.  Example::

    [experiment]
    model = kink
    dimension = 2
    seeds = 1,2,3,4,5
    reference = oracle
    output_dir = out

    [mode.mlasg]
    mode = MLASG
    tol = 1e-4
    c = 1.0

    [mode.asg]
    mode = ASG_FIXED_VARIANCE
    tol = 1e-4
    sigma0 = 1e-4

Recognized ``[experiment]`` keys: ``model`` (kink | constant |
co-oxidation | co-oxidation-13), ``dimension``, ``seeds`` (comma list),
``reference`` (a number, ``oracle``, or ``none``), ``output_dir``.
``[model]`` keys for the chain models: ``num_sites``, ``relax_steps``,
``average_steps``; for ``constant``: ``value``; for synthetic models:
``cost_unit_variance``.  Mode sections take the refinement knobs
``mode``, ``tol``, ``c``, ``B``, ``sigma0``, ``max_level``, ``max_points``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .driver import RefinementConfig, RefinementMode
from .grid import DomainError

MODEL_NAMES = ("kink", "constant", "co-oxidation", "co-oxidation-13")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    dimension: int
    seeds: tuple[int, ...]
    modes: tuple[tuple[str, RefinementConfig], ...]
    reference: float | str | None = None
    output_dir: Path = Path("out")
    model_params: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise DomainError(f"unknown model {self.model!r}; expected one of {MODEL_NAMES}")
        if self.dimension < 1:
            raise DomainError("dimension must be >= 1")
        if not self.seeds:
            raise DomainError("need at least one seed")
        if not self.modes:
            raise DomainError("need at least one mode section")
        if self.model == "co-oxidation" and self.dimension != 7:
            raise DomainError("co-oxidation has 7 parameters")
        if self.model == "co-oxidation-13" and self.dimension != 13:
            raise DomainError("co-oxidation-13 has 13 parameters")
        labels = [label for label, _ in self.modes]
        if len(set(labels)) != len(labels):
            raise DomainError("duplicate mode labels")


def _parse_mode(label: str, section) -> RefinementConfig:
    try:
        mode = RefinementMode[section.get("mode", "MLASG")]
    except KeyError as exc:
        raise DomainError(f"[mode.{label}] has unknown mode {section.get('mode')!r}") from exc
    kwargs = dict(mode=mode, tol=section.getfloat("tol"))
    if kwargs["tol"] is None:
        raise DomainError(f"[mode.{label}] is missing tol")
    for key, conv in (
        ("c", section.getfloat),
        ("B", section.getfloat),
        ("sigma0", section.getfloat),
        ("max_level", section.getint),
        ("max_points", section.getint),
        ("m_min", section.getint),
        ("m_max", section.getint),
    ):
        if key in section:
            kwargs[key] = conv(key)
    return RefinementConfig(**kwargs)


def parse_config(path: str | Path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)
    if "experiment" not in parser:
        raise DomainError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]
    reference: float | str | None = exp.get("reference", fallback=None)
    if reference is not None:
        reference = reference.strip()
        if reference.lower() in ("", "none"):
            reference = None
        elif reference.lower() != "oracle":
            reference = float(reference)
        else:
            reference = "oracle"
    modes = []
    for name in parser.sections():
        if name.startswith("mode."):
            label = name[len("mode.") :]
            modes.append((label, _parse_mode(label, parser[name])))
    model_params = dict(parser["model"]) if "model" in parser else {}
    return ExperimentConfig(
        model=exp.get("model", "kink"),
        dimension=exp.getint("dimension", 2),
        seeds=tuple(int(s) for s in exp.get("seeds", "0").split(",") if s.strip()),
        modes=tuple(modes),
        reference=reference,
        output_dir=Path(exp.get("output_dir", "out")),
        model_params=model_params,
    )


def with_overrides(
    config: ExperimentConfig,
    *,
    output_dir: Path | None = None,
    seed: int | None = None,
    threads: int | None = None,
    scale: str | None = None,
) -> ExperimentConfig:
    """Apply command-line overrides to a parsed configuration."""
    kwargs = {}
    if output_dir is not None:
        kwargs["output_dir"] = Path(output_dir)
    if seed is not None:
        kwargs["seeds"] = (seed,)
    if threads is not None:
        kwargs["threads"] = threads
    if scale is not None:
        params = dict(config.model_params)
        steps = "100000" if scale == "desk" else "10000000"
        params.setdefault("relax_steps", steps)
        params.setdefault("average_steps", steps)
        if scale == "full":
            params["relax_steps"] = steps
            params["average_steps"] = steps
        kwargs["model_params"] = params
    return replace(config, **kwargs)
