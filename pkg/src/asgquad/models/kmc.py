"""Kinetic Monte Carlo model of CO oxidation on a 1D chain of active sites.

Each site of a periodic chain is empty, CO covered, or O covered.  The
chain evolves as a Markov jump process under ten elementary processes: CO
adsorption/desorption on single sites, dissociative O2 adsorption and
associative desorption on adjacent pairs, CO and O hops onto empty
neighbors in both directions, and CO + O reaction for both orderings of an
adjacent pair.  Trajectories are generated with the direct (rejection-free)
stochastic simulation algorithm; the observable is the time-averaged CO
coverage after a relaxation phase.

An extended variant adds up to three spectator species that only adsorb on
empty sites and desorb again, which pads the parameter space from 7 to 13
dimensions without changing the chemistry.

Input parameters map from the unit cube through independent log-uniform
ranges; desorption rates are tied to adsorption via the equilibrium
constants (k_des = k_ads / K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from ..grid import DomainError
from ..sampling import SampleAccumulator
from ..streams import substream_seed

EMPTY = 0
CO = 1
O = 2
B_STATES = (3, 4, 5)

_CHUNK_STEPS = 1 << 19


@dataclass(frozen=True)
class DummySpecies:
    """Spectator adsorbate: adsorbs on empty sites, desorbs, does nothing else."""

    k_des: float
    K: float

    @property
    def k_ads(self) -> float:
        return self.k_des * self.K


@dataclass(frozen=True)
class RateSet:
    """Rates of the elementary processes.

    Desorption rates are derived from the adsorption rates and equilibrium
    constants.  Zero rates are allowed to switch processes off (used by the
    physics checks); equilibrium constants must stay positive.
    """

    K_CO: float
    K_O2: float
    k_ads_CO: float
    k_ads_O2: float
    k_diff_CO: float
    k_diff_O: float
    k_reac: float
    dummies: tuple[DummySpecies, ...] = ()

    def __post_init__(self):
        if self.K_CO <= 0.0 or self.K_O2 <= 0.0:
            raise DomainError("equilibrium constants must be > 0")
        for name in ("k_ads_CO", "k_ads_O2", "k_diff_CO", "k_diff_O", "k_reac"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"{name} must be >= 0")
        if len(self.dummies) > len(B_STATES):
            raise DomainError(f"at most {len(B_STATES)} dummy species supported")
        for d in self.dummies:
            if d.k_des < 0.0 or d.K <= 0.0:
                raise DomainError("dummy species need k_des >= 0 and K > 0")

    @property
    def k_des_CO(self) -> float:
        return self.k_ads_CO / self.K_CO

    @property
    def k_des_O2(self) -> float:
        return self.k_ads_O2 / self.K_O2


def default_rates() -> RateSet:
    return RateSet(
        K_CO=2.0 / 9.2 * 1e2,
        K_O2=9.7 / 2.8 * 1e6,
        k_ads_CO=2.0e8,
        k_ads_O2=9.7e7,
        k_diff_CO=5.0e-1,
        k_diff_O=6.6e-2,
        k_reac=1.7e5,
    )


@dataclass(frozen=True)
class ChainConfig:
    """Lattice size, step budget, and trajectory seed."""

    num_sites: int = 20
    relax_steps: int = 100_000
    average_steps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.num_sites < 2:
            raise DomainError("need at least 2 sites")
        if self.relax_steps < 0 or self.average_steps < 1:
            raise DomainError("relax_steps must be >= 0, average_steps >= 1")


class Channel(NamedTuple):
    name: str
    rate: float
    pair: bool
    in0: int
    in1: int
    out0: int
    out1: int


def channel_table(rates: RateSet) -> list[Channel]:
    """All process channels; pair channels act on sites (l, l+1)."""
    table = [
        Channel("ads_CO", rates.k_ads_CO, False, EMPTY, -1, CO, -1),
        Channel("ads_O2", rates.k_ads_O2, True, EMPTY, EMPTY, O, O),
        Channel("des_CO", rates.k_des_CO, False, CO, -1, EMPTY, -1),
        Channel("des_O2", rates.k_des_O2, True, O, O, EMPTY, EMPTY),
        Channel("diff_CO_fwd", rates.k_diff_CO, True, CO, EMPTY, EMPTY, CO),
        Channel("diff_CO_bwd", rates.k_diff_CO, True, EMPTY, CO, CO, EMPTY),
        Channel("diff_O_fwd", rates.k_diff_O, True, O, EMPTY, EMPTY, O),
        Channel("diff_O_bwd", rates.k_diff_O, True, EMPTY, O, O, EMPTY),
        Channel("reac_CO_O", rates.k_reac, True, CO, O, EMPTY, EMPTY),
        Channel("reac_O_CO", rates.k_reac, True, O, CO, EMPTY, EMPTY),
    ]
    for i, dummy in enumerate(rates.dummies):
        b = B_STATES[i]
        table.append(Channel(f"ads_B{i + 1}", dummy.k_ads, False, EMPTY, -1, b, -1))
        table.append(Channel(f"des_B{i + 1}", dummy.k_des, False, b, -1, EMPTY, -1))
    return table


class _ChannelArrays(NamedTuple):
    rate: np.ndarray
    pair: np.ndarray
    in0: np.ndarray
    in1: np.ndarray
    out0: np.ndarray
    out1: np.ndarray


def _channel_arrays(rates: RateSet) -> _ChannelArrays:
    table = channel_table(rates)
    return _ChannelArrays(
        rate=np.array([c.rate for c in table], dtype=np.float64),
        pair=np.array([c.pair for c in table], dtype=np.bool_),
        in0=np.array([c.in0 for c in table], dtype=np.int64),
        in1=np.array([c.in1 for c in table], dtype=np.int64),
        out0=np.array([c.out0 for c in table], dtype=np.int64),
        out1=np.array([c.out1 for c in table], dtype=np.int64),
    )


def build_event_table(
    state: Sequence[int], rates: RateSet
) -> list[tuple[tuple[str, int], float]]:
    """Enumerate every enabled elementary event with its propensity."""
    n = len(state)
    events = []
    for ch in channel_table(rates):
        if ch.rate <= 0.0:
            continue
        for l in range(n):
            if ch.pair:
                if state[l] == ch.in0 and state[(l + 1) % n] == ch.in1:
                    events.append(((ch.name, l), ch.rate))
            elif state[l] == ch.in0:
                events.append(((ch.name, l), ch.rate))
    return events


@njit(cache=True, nogil=True)
def _refresh_column(P, state, ch_rate, ch_pair, ch_in0, ch_in1, l):
    n = state.shape[0]
    for c in range(P.shape[0]):
        if ch_pair[c]:
            ok = state[l] == ch_in0[c] and state[(l + 1) % n] == ch_in1[c]
        else:
            ok = state[l] == ch_in0[c]
        P[c, l] = ch_rate[c] if ok else 0.0


@njit(cache=True, nogil=True)
def _build_propensities(state, ch_rate, ch_pair, ch_in0, ch_in1):
    n_ch = ch_rate.shape[0]
    n = state.shape[0]
    P = np.zeros((n_ch, n), dtype=np.float64)
    for l in range(n):
        _refresh_column(P, state, ch_rate, ch_pair, ch_in0, ch_in1, l)
    return P


@njit(cache=True, nogil=True)
def _run_steps(
    state,
    P,
    ch_rate,
    ch_pair,
    ch_in0,
    ch_in1,
    ch_out0,
    ch_out1,
    uniforms,
    n_steps,
    record,
):
    """Execute up to n_steps events, updating state and P in place.

    Returns (steps executed, residence time, CO-site-weighted residence
    time, absorbed flag).  One step consumes two uniforms: waiting time and
    event selection.
    """
    n = state.shape[0]
    n_ch = ch_rate.shape[0]
    chsum = np.empty(n_ch, dtype=np.float64)
    time_sum = 0.0
    co_time = 0.0
    for step in range(n_steps):
        total = 0.0
        for c in range(n_ch):
            s = 0.0
            for l in range(n):
                s += P[c, l]
            chsum[c] = s
            total += s
        if total <= 0.0:
            return step, time_sum, co_time, True
        tau = -math.log1p(-uniforms[2 * step]) / total
        if record:
            time_sum += tau
            nco = 0
            for l in range(n):
                if state[l] == 1:
                    nco += 1
            co_time += tau * nco
        r = uniforms[2 * step + 1] * total
        c_sel = -1
        acc = 0.0
        for c in range(n_ch):
            if chsum[c] <= 0.0:
                continue
            if r < acc + chsum[c]:
                c_sel = c
                break
            acc += chsum[c]
        if c_sel == -1:
            # rounding pushed r past the last bin; take the last live channel
            for c in range(n_ch - 1, -1, -1):
                if chsum[c] > 0.0:
                    c_sel = c
                    acc = total - chsum[c]
                    break
        l_sel = -1
        for l in range(n):
            p = P[c_sel, l]
            if p <= 0.0:
                continue
            if r < acc + p:
                l_sel = l
                break
            acc += p
        if l_sel == -1:
            for l in range(n - 1, -1, -1):
                if P[c_sel, l] > 0.0:
                    l_sel = l
                    break
        state[l_sel] = ch_out0[c_sel]
        if ch_pair[c_sel]:
            state[(l_sel + 1) % n] = ch_out1[c_sel]
        for dl in (-1, 0, 1):
            _refresh_column(
                P, state, ch_rate, ch_pair, ch_in0, ch_in1, (l_sel + dl) % n
            )
    return n_steps, time_sum, co_time, False


class SsaResult(NamedTuple):
    coverage: float
    steps: int
    absorbed: bool


def initial_state(num_sites: int) -> np.ndarray:
    """All-empty chain; relaxation is expected to erase the choice."""
    return np.zeros(num_sites, dtype=np.int64)


def ssa_run(config: ChainConfig, rates: RateSet) -> SsaResult:
    """One trajectory: relax without recording, then time-average the CO coverage."""
    arrays = _channel_arrays(rates)
    state = initial_state(config.num_sites)
    P = _build_propensities(state, arrays.rate, arrays.pair, arrays.in0, arrays.in1)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    steps_total = 0
    absorbed = False
    time_sum = 0.0
    co_time = 0.0
    for phase_steps, record in ((config.relax_steps, False), (config.average_steps, True)):
        remaining = phase_steps
        while remaining > 0 and not absorbed:
            chunk = min(remaining, _CHUNK_STEPS)
            uniforms = rng.random(2 * chunk)
            done, t, c, absorbed = _run_steps(
                state,
                P,
                arrays.rate,
                arrays.pair,
                arrays.in0,
                arrays.in1,
                arrays.out0,
                arrays.out1,
                uniforms,
                chunk,
                record,
            )
            steps_total += done
            remaining -= chunk
            if record:
                time_sum += t
                co_time += c
    if time_sum > 0.0:
        coverage = co_time / (time_sum * config.num_sites)
    else:
        # absorbed before any averaging; report the frozen configuration
        coverage = float(np.count_nonzero(state == CO)) / config.num_sites
    return SsaResult(coverage, steps_total, absorbed)


def step_once(state, P, rates: RateSet, u_time: float, u_select: float) -> bool:
    """Advance one event in place (test hook); returns the absorbed flag."""
    arrays = _channel_arrays(rates)
    uniforms = np.array([u_time, u_select], dtype=np.float64)
    done, _, _, absorbed = _run_steps(
        state,
        P,
        arrays.rate,
        arrays.pair,
        arrays.in0,
        arrays.in1,
        arrays.out0,
        arrays.out1,
        uniforms,
        1,
        False,
    )
    return absorbed


def propensity_matrix(state, rates: RateSet) -> np.ndarray:
    """Propensities rebuilt from scratch (oracle for the incremental updates)."""
    arrays = _channel_arrays(rates)
    return _build_propensities(
        np.asarray(state, dtype=np.int64), arrays.rate, arrays.pair, arrays.in0, arrays.in1
    )


def coverage_estimator(
    config: ChainConfig, rates: RateSet, n_replicas: int
) -> SampleAccumulator:
    """Independent replica trajectories folded into one accumulator."""
    if n_replicas < 1:
        raise DomainError("n_replicas must be >= 1")
    acc = SampleAccumulator()
    for replica in range(n_replicas):
        seed = substream_seed((config.seed,), replica)
        result = ssa_run(
            ChainConfig(config.num_sites, config.relax_steps, config.average_steps, seed),
            rates,
        )
        acc.push(result.coverage, float(result.steps))
    return acc


BASE_PARAMETER_NAMES = (
    "K_CO",
    "K_O2",
    "k_ads_CO",
    "k_ads_O2",
    "k_diff_CO",
    "k_diff_O",
    "k_reac",
)


@dataclass(frozen=True)
class ParameterBox:
    """Per-parameter positive bounds with a log-uniform unit-cube transform."""

    names: tuple[str, ...]
    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.lows) == len(self.highs)):
            raise DomainError("names/lows/highs must have equal length")
        for name, lo, hi in zip(self.names, self.lows, self.highs):
            if lo <= 0.0 or hi <= lo:
                raise DomainError(f"need 0 < low < high for {name}")

    @property
    def dimension(self) -> int:
        return len(self.names)

    def map_unit(self, u: Sequence[float]) -> tuple[float, ...]:
        if len(u) != self.dimension:
            raise DomainError(f"point has dimension {len(u)}, box has {self.dimension}")
        values = []
        for ui, lo, hi in zip(u, self.lows, self.highs):
            if not 0.0 <= ui <= 1.0:
                raise DomainError(f"unit-cube coordinate {ui} outside [0, 1]")
            # lo**(1-u) * hi**u: log-uniform with exact endpoints
            values.append(lo ** (1.0 - ui) * hi**ui)
        return tuple(values)


def base_parameter_box() -> ParameterBox:
    return ParameterBox(
        names=BASE_PARAMETER_NAMES,
        lows=(2.0 / 9.2, 9.7 / 2.8 * 1e4, 1.0e8, 4.85e7, 5.0e-3, 6.6e-4, 1.7e3),
        highs=(2.0 / 9.2 * 1e4, 9.7 / 2.8 * 1e8, 4.0e8, 1.94e8, 5.0e1, 6.6e0, 1.7e7),
    )


def extended_parameter_box() -> ParameterBox:
    base = base_parameter_box()
    names = list(base.names)
    lows = list(base.lows)
    highs = list(base.highs)
    for i in (1, 2, 3):
        names += [f"k_des_B{i}", f"K_B{i}"]
        lows += [1.0, 1.0]
        highs += [1.0e5, 1.0e4]
    return ParameterBox(tuple(names), tuple(lows), tuple(highs))


def params_from_unit_cube(box: ParameterBox, u: Sequence[float]) -> RateSet:
    """Log-uniform parameter map; desorption rates follow from the identities."""
    if box.dimension not in (7, 13):
        raise DomainError(f"expected a 7- or 13-parameter box, got {box.dimension}")
    values = dict(zip(box.names, box.map_unit(u)))
    dummies = []
    for i in (1, 2, 3):
        if f"k_des_B{i}" in values:
            dummies.append(DummySpecies(k_des=values[f"k_des_B{i}"], K=values[f"K_B{i}"]))
    return RateSet(
        K_CO=values["K_CO"],
        K_O2=values["K_O2"],
        k_ads_CO=values["k_ads_CO"],
        k_ads_O2=values["k_ads_O2"],
        k_diff_CO=values["k_diff_CO"],
        k_diff_O=values["k_diff_O"],
        k_reac=values["k_reac"],
        dummies=tuple(dummies),
    )


class CoOxidationModel:
    """Monte Carlo model surface of the chain simulation.

    One sample is one full trajectory at the mapped parameters; its cost is
    the number of executed events.
    """

    def __init__(
        self,
        num_sites: int = 20,
        relax_steps: int = 100_000,
        average_steps: int = 100_000,
        extended: bool = False,
    ):
        self.num_sites = num_sites
        self.relax_steps = relax_steps
        self.average_steps = average_steps
        self.extended = extended
        self.box = extended_parameter_box() if extended else base_parameter_box()
        self.dimension = self.box.dimension

    def sample(self, x, rng):
        rates = params_from_unit_cube(self.box, x)
        seed = int(rng.integers(0, 2**63 - 1))
        config = ChainConfig(self.num_sites, self.relax_steps, self.average_steps, seed)
        result = ssa_run(config, rates)
        return result.coverage, float(result.steps)
