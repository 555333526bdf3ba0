"""Sparse grids built from piecewise-linear hierarchical basis functions.

The one-dimensional hierarchy on [0, 1] starts with the constant function
(level 0), adds the two boundary half-hats at level 1 and, from level 2 on,
interior hats of half-width 2**-l centered at odd multiples of 2**-l.
Multivariate basis functions are tensor products identified by a pair of
integer vectors (levels, positions).

A :class:`SparseGrid` stores one node per basis function and is kept closed
under the ancestor relation: whenever a node is present, so is every
coarser node whose basis function is nonzero at the node's point.  Closure
makes the hierarchical surplus of a node a pure function of the node values
on its ancestor box, independent of the order in which nodes were added and
identical to the surplus on a non-adaptive full sparse grid.

Topology (parents, children, ancestors) is never stored; it is integer
arithmetic on the index vectors.  Node coordinates are dyadic rationals and
are produced by the defining recursion, which is exact in binary floating
point.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence, TextIO


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class GridStructureError(RuntimeError):
    """A grid invariant (ancestor closure, surplus availability) is violated."""


class MultiIndex(NamedTuple):
    """Level/position index pair identifying one basis function."""

    levels: tuple[int, ...]
    positions: tuple[int, ...]

    @property
    def dimension(self) -> int:
        return len(self.levels)

    @property
    def total_level(self) -> int:
        return sum(self.levels)

    def coords(self) -> tuple[float, ...]:
        return tuple(
            node_position_1d(l, i) for l, i in zip(self.levels, self.positions)
        )

    def describe(self) -> str:
        return "levels=({}) positions=({})".format(
            ",".join(map(str, self.levels)), ",".join(map(str, self.positions))
        )


def sort_key(key: MultiIndex) -> tuple:
    """Canonical ordering: ascending total level, then lexicographic."""
    return (key.total_level, key.levels, key.positions)


def num_positions_1d(level: int) -> int:
    """Number of basis functions in the 1D hierarchy at a given level."""
    if level < 0:
        raise DomainError(f"negative level {level}")
    if level == 0:
        return 1
    if level == 1:
        return 2
    return 2 ** (level - 1)


def _check_1d(level: int, position: int) -> None:
    if level < 0 or position < 0 or position >= num_positions_1d(level):
        raise DomainError(f"invalid 1D index (level={level}, position={position})")


def make_index(levels: Sequence[int], positions: Sequence[int]) -> MultiIndex:
    """Build a validated :class:`MultiIndex`."""
    key = MultiIndex(tuple(int(l) for l in levels), tuple(int(i) for i in positions))
    validate_index(key)
    return key


def validate_index(key: MultiIndex) -> None:
    if len(key.levels) != len(key.positions) or len(key.levels) < 1:
        raise DomainError(f"malformed index: {key.describe()}")
    for l, i in zip(key.levels, key.positions):
        _check_1d(l, i)


def root_index(dimension: int) -> MultiIndex:
    if dimension < 1:
        raise DomainError(f"dimension must be >= 1, got {dimension}")
    return MultiIndex((0,) * dimension, (0,) * dimension)


def node_position_1d(level: int, position: int) -> float:
    """Coordinate of the 1D node: 0.5 at level 0, the interval ends at level 1,
    then dyadic bisection (exact in binary floating point)."""
    _check_1d(level, position)
    if level == 0:
        return 0.5
    if level == 1:
        return float(position)
    if level == 2:
        return 0.25 if position == 0 else 0.75
    offset = 2.0 ** -level
    if position % 2 == 0:
        offset = -offset
    return node_position_1d(level - 1, position // 2) + offset


def basis_value_1d(level: int, position: int, x: float) -> float:
    """Evaluate the 1D hierarchical hat function at x in [0, 1]."""
    _check_1d(level, position)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    if level == 0:
        return 1.0
    return max(1.0 - 2.0**level * abs(x - node_position_1d(level, position)), 0.0)


def weight_1d(level: int, position: int) -> float:
    """Exact integral of the 1D basis function over [0, 1].

    Level 0 integrates to 1, the level-1 half-hats (clipped to the domain)
    to 1/4, and a full interior hat of half-width 2**-l to 2**-l.
    """
    _check_1d(level, position)
    if level == 0:
        return 1.0
    if level == 1:
        return 0.25
    return 2.0 ** -level


def weight(key: MultiIndex) -> float:
    """Product of 1D weights; bounded by 2**-total_level."""
    validate_index(key)
    w = 1.0
    for l, i in zip(key.levels, key.positions):
        w *= weight_1d(l, i)
    return w


def support_1d(level: int, position: int) -> tuple[float, float]:
    """Closed support interval of the 1D basis function."""
    _check_1d(level, position)
    if level == 0:
        return (0.0, 1.0)
    if level == 1:
        return (0.0, 0.5) if position == 0 else (0.5, 1.0)
    h = 2.0 ** (1 - level)
    return (position * h, (position + 1) * h)


def parent_1d(level: int, position: int) -> tuple[int, int] | None:
    """The unique coarser 1D basis function with overlapping support."""
    _check_1d(level, position)
    if level == 0:
        return None
    if level == 1:
        return (0, 0)
    if level == 2:
        return (1, position)
    return (level - 1, position // 2)


def children_1d(level: int, position: int) -> tuple[tuple[int, int], ...]:
    """The finer 1D basis functions supported inside this one's support."""
    _check_1d(level, position)
    if level == 0:
        return ((1, 0), (1, 1))
    if level == 1:
        return ((2, position),)
    return ((level + 1, 2 * position), (level + 1, 2 * position + 1))


def ancestor_chain_1d(level: int, position: int) -> list[tuple[int, int]]:
    """1D indices from level 0 down to (level, position), inclusive."""
    chain = [(level, position)]
    node = parent_1d(level, position)
    while node is not None:
        chain.append(node)
        node = parent_1d(*node)
    chain.reverse()
    return chain


def parents(key: MultiIndex) -> set[MultiIndex]:
    """All indices one total level coarser with overlapping support."""
    validate_index(key)
    out: set[MultiIndex] = set()
    for d, (l, i) in enumerate(zip(key.levels, key.positions)):
        if l == 0:
            continue
        pl, pi = parent_1d(l, i)
        levels = key.levels[:d] + (pl,) + key.levels[d + 1 :]
        positions = key.positions[:d] + (pi,) + key.positions[d + 1 :]
        out.add(MultiIndex(levels, positions))
    return out


def children(key: MultiIndex) -> set[MultiIndex]:
    """All indices one total level finer with overlapping support."""
    validate_index(key)
    out: set[MultiIndex] = set()
    for d, (l, i) in enumerate(zip(key.levels, key.positions)):
        for cl, ci in children_1d(l, i):
            levels = key.levels[:d] + (cl,) + key.levels[d + 1 :]
            positions = key.positions[:d] + (ci,) + key.positions[d + 1 :]
            out.add(MultiIndex(levels, positions))
    return out


def ancestors(key: MultiIndex) -> Iterator[MultiIndex]:
    """All coarser indices whose basis is nonzero at the node's point.

    This is the tensor box of per-dimension ancestor chains, excluding the
    index itself; exactly the set whose presence ancestor closure requires.
    """
    validate_index(key)
    chains = [ancestor_chain_1d(l, i) for l, i in zip(key.levels, key.positions)]
    for combo in itertools.product(*chains):
        levels = tuple(c[0] for c in combo)
        if levels == key.levels:
            continue
        yield MultiIndex(levels, tuple(c[1] for c in combo))


def level_compositions(total: int, dims: int) -> Iterator[tuple[int, ...]]:
    """All level vectors of the given length summing to ``total``."""
    if dims == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in level_compositions(total - first, dims - 1):
            yield (first,) + rest


def keys_at_total_level(dimension: int, total: int) -> Iterator[MultiIndex]:
    """All valid indices with the given total level (one full-grid shell)."""
    for levels in level_compositions(total, dimension):
        ranges = [range(num_positions_1d(l)) for l in levels]
        for positions in itertools.product(*ranges):
            yield MultiIndex(levels, positions)


def full_sparse_grid_keys(dimension: int, max_total: int) -> Iterator[MultiIndex]:
    """All indices of the non-adaptive sparse grid with total level <= max_total."""
    for total in range(max_total + 1):
        yield from keys_at_total_level(dimension, total)


class SurplusCoefficients(NamedTuple):
    """One row of the linear map from node values to a surplus.

    ``entries`` pairs each contributing index with its coefficient; the
    target itself carries coefficient 1 and every other entry has strictly
    smaller total level.
    """

    target: MultiIndex
    entries: tuple[tuple[MultiIndex, float], ...]


@lru_cache(maxsize=None)
def _row_1d(level: int, position: int) -> tuple[tuple[int, int, float], ...]:
    # Expand the 1D surplus recursion into coefficients on node values.
    if level == 0:
        return ((0, 0, 1.0),)
    x = node_position_1d(level, position)
    acc: dict[tuple[int, int], float] = {(level, position): 1.0}
    for ml, mi in ancestor_chain_1d(level, position)[:-1]:
        phi = basis_value_1d(ml, mi, x)
        for al, ai, c in _row_1d(ml, mi):
            acc[(al, ai)] = acc.get((al, ai), 0.0) - phi * c
    return tuple(
        (l, i, c) for (l, i), c in sorted(acc.items()) if c != 0.0
    )


def surplus_coefficient_row(key: MultiIndex) -> SurplusCoefficients:
    """Coefficients expressing the surplus at ``key`` in terms of node values.

    The expansion factorizes over dimensions, so the row is the tensor
    product of the memoized 1D rows.  It depends only on the index, not on
    which other nodes happen to be in a grid, because closure guarantees
    the whole ancestor box is present.
    """
    validate_index(key)
    rows = [_row_1d(l, i) for l, i in zip(key.levels, key.positions)]
    entries = []
    for combo in itertools.product(*rows):
        coef = 1.0
        for c in combo:
            coef *= c[2]
        entries.append(
            (MultiIndex(tuple(c[0] for c in combo), tuple(c[1] for c in combo)), coef)
        )
    entries.sort(key=lambda e: sort_key(e[0]))
    return SurplusCoefficients(target=key, entries=tuple(entries))


class GridNode:
    """State attached to one grid point."""

    __slots__ = (
        "key",
        "coords",
        "estimate",
        "variance_of_mean",
        "sample_count",
        "cost_spent",
        "surplus",
        "weight",
    )

    def __init__(
        self,
        key: MultiIndex,
        estimate: float = 0.0,
        variance_of_mean: float = 0.0,
        sample_count: int = 0,
        cost_spent: float = 0.0,
        surplus: float | None = None,
    ):
        self.key = key
        self.coords = key.coords()
        self.estimate = float(estimate)
        self.variance_of_mean = float(variance_of_mean)
        self.sample_count = int(sample_count)
        self.cost_spent = float(cost_spent)
        self.surplus = surplus
        self.weight = weight(key)
        if self.variance_of_mean < 0.0:
            raise DomainError("variance_of_mean must be >= 0")
        if self.sample_count < 0 or self.cost_spent < 0.0:
            raise DomainError("sample_count and cost_spent must be >= 0")

    def __repr__(self):
        return (
            f"GridNode({self.key.describe()}, estimate={self.estimate!r}, "
            f"surplus={self.surplus!r})"
        )


class SparseGrid:
    """A set of hierarchical nodes closed under the ancestor relation."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise DomainError(f"dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self.nodes: dict[MultiIndex, GridNode] = {}
        self._max_level = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, key: MultiIndex) -> bool:
        return key in self.nodes

    @property
    def current_level(self) -> int:
        return self._max_level

    def sorted_keys(self) -> list[MultiIndex]:
        return sorted(self.nodes, key=sort_key)

    def frontier_keys(self) -> list[MultiIndex]:
        top = self.current_level
        return [k for k in self.sorted_keys() if k.total_level == top]

    def insert(
        self,
        key: MultiIndex,
        estimate: float,
        variance_of_mean: float = 0.0,
        sample_count: int = 0,
        cost_spent: float = 0.0,
    ) -> GridNode:
        """Add a node.  All parents must already be present (closure)."""
        validate_index(key)
        if key.dimension != self.dimension:
            raise DomainError(
                f"index dimension {key.dimension} != grid dimension {self.dimension}"
            )
        if key in self.nodes:
            raise GridStructureError(f"duplicate node {key.describe()}")
        for p in parents(key):
            if p not in self.nodes:
                raise GridStructureError(
                    f"inserting {key.describe()} before its parent {p.describe()}"
                )
        node = GridNode(key, estimate, variance_of_mean, sample_count, cost_spent)
        self.nodes[key] = node
        if key.total_level > self._max_level:
            self._max_level = key.total_level
        return node

    def _node_chains(self, key: MultiIndex) -> list[list[tuple[int, int, float]]]:
        # Per-dimension ancestor chains with basis values at the node's point.
        chains = []
        for l, i in zip(key.levels, key.positions):
            x = node_position_1d(l, i)
            chains.append(
                [(a, p, basis_value_1d(a, p, x)) for a, p in ancestor_chain_1d(l, i)]
            )
        return chains

    def _coarser_interpolant_at_node(self, key: MultiIndex) -> float:
        # Interpolant of all strictly coarser nodes, evaluated at the node's
        # own point.  Only the ancestor box contributes there.
        total = 0.0
        for combo in itertools.product(*self._node_chains(key)):
            levels = tuple(c[0] for c in combo)
            if levels == key.levels:
                continue
            m = MultiIndex(levels, tuple(c[1] for c in combo))
            anc = self.nodes.get(m)
            if anc is None:
                raise GridStructureError(
                    f"missing ancestor {m.describe()} of {key.describe()}"
                )
            if anc.surplus is None:
                raise GridStructureError(
                    f"ancestor {m.describe()} has no surplus yet"
                )
            phi = 1.0
            for c in combo:
                phi *= c[2]
            total += anc.surplus * phi
        return total

    def compute_surplus(self, key: MultiIndex, value: float | None = None) -> float:
        """Set and return the node's surplus: value minus the coarser interpolant."""
        node = self.nodes.get(key)
        if node is None:
            raise GridStructureError(f"node {key.describe()} not in grid")
        if value is None:
            value = node.estimate
        node.surplus = float(value) - self._coarser_interpolant_at_node(key)
        return node.surplus

    def _eval_chain_1d(
        self, x: float, max_level: int
    ) -> list[tuple[int, float]]:
        # (position, basis value) per level along the 1D path containing x;
        # stops at the level where x becomes a support boundary, since the
        # basis vanishes there and on every finer level.
        chain = [(0, 1.0)]
        if max_level == 0:
            return chain
        if x < 0.5:
            chain.append((0, 1.0 - 2.0 * x))
        elif x > 0.5:
            chain.append((1, 2.0 * x - 1.0))
        else:
            return chain
        for level in range(2, max_level + 1):
            scaled = x * 2.0 ** (level - 1)
            pos = math.floor(scaled)
            if pos == scaled:
                break
            chain.append(
                (pos, 1.0 - 2.0**level * abs(x - node_position_1d(level, pos)))
            )
        return chain

    def interpolate(
        self, x: Sequence[float], max_total_level: int | None = None
    ) -> float:
        """Evaluate the hierarchical interpolant at a point of the unit cube.

        Walks down the node hierarchy visiting only present nodes whose
        support contains ``x``; optionally restricted to nodes with total
        level <= ``max_total_level``.
        """
        if len(x) != self.dimension:
            raise DomainError(f"point has dimension {len(x)}, grid {self.dimension}")
        for xd in x:
            if not 0.0 <= xd <= 1.0:
                raise DomainError(f"point {tuple(x)} outside the unit cube")
        cap = self.current_level if max_total_level is None else max_total_level
        if cap < 0 or not self.nodes:
            return 0.0
        root = root_index(self.dimension)
        if root not in self.nodes:
            raise GridStructureError("grid has nodes but no root")
        chains = [self._eval_chain_1d(float(xd), cap) for xd in x]
        total = 0.0
        stack = [root]
        seen = {root}
        while stack:
            key = stack.pop()
            node = self.nodes[key]
            if node.surplus is None:
                raise GridStructureError(f"node {key.describe()} has no surplus yet")
            phi = 1.0
            for d in range(self.dimension):
                phi *= chains[d][key.levels[d]][1]
            total += node.surplus * phi
            if key.total_level >= cap:
                continue
            for d in range(self.dimension):
                nl = key.levels[d] + 1
                chain = chains[d]
                if nl >= len(chain):
                    continue
                child = MultiIndex(
                    key.levels[:d] + (nl,) + key.levels[d + 1 :],
                    key.positions[:d] + (chain[nl][0],) + key.positions[d + 1 :],
                )
                if child not in seen and child in self.nodes:
                    seen.add(child)
                    stack.append(child)
        return total

    def integrate(self) -> float:
        """Quadrature value: sum of surplus times basis weight over all nodes."""
        total = 0.0
        for key in self.sorted_keys():
            node = self.nodes[key]
            if node.surplus is None:
                raise GridStructureError(f"node {key.describe()} has no surplus yet")
            total += node.surplus * node.weight
        return total

    def surplus_coefficients(self, key: MultiIndex) -> SurplusCoefficients:
        """Coefficient row for ``key``, verifying its ancestors are present."""
        row = surplus_coefficient_row(key)
        for m, _ in row.entries:
            if m != key and m not in self.nodes:
                raise GridStructureError(
                    f"missing ancestor {m.describe()} of {key.describe()}"
                )
        return row


def save_checkpoint(grid: SparseGrid, target: str | TextIO) -> None:
    """Write a grid as line-delimited node records.

    Header carries the dimension; each node line is
    ``levels;positions;estimate;variance_of_mean;sample_count;cost_spent;surplus``
    with full round-trip precision for the reals.
    """
    own = isinstance(target, str)
    fh = open(target, "w", newline="\n") if own else target
    try:
        fh.write(f"dimension={grid.dimension}\n")
        for key in grid.sorted_keys():
            n = grid.nodes[key]
            surplus = "nan" if n.surplus is None else repr(n.surplus)
            fh.write(
                "{};{};{};{};{};{};{}\n".format(
                    ",".join(map(str, key.levels)),
                    ",".join(map(str, key.positions)),
                    repr(n.estimate),
                    repr(n.variance_of_mean),
                    n.sample_count,
                    repr(n.cost_spent),
                    surplus,
                )
            )
    finally:
        if own:
            fh.close()


def load_checkpoint(source: str | TextIO) -> SparseGrid:
    """Read a grid written by :func:`save_checkpoint`."""
    own = isinstance(source, str)
    fh = open(source) if own else source
    try:
        header = fh.readline().strip()
        if not header.startswith("dimension="):
            raise ValueError(f"bad checkpoint header: {header!r}")
        grid = SparseGrid(int(header.split("=", 1)[1]))
        records = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            levels_s, positions_s, est, var, cnt, cost, surplus = line.split(";")
            key = make_index(
                [int(v) for v in levels_s.split(",")],
                [int(v) for v in positions_s.split(",")],
            )
            records.append(
                (key, float(est), float(var), int(cnt), float(cost), float(surplus))
            )
        records.sort(key=lambda r: sort_key(r[0]))
        for key, est, var, cnt, cost, surplus in records:
            node = grid.insert(key, est, var, cnt, cost)
            node.surplus = None if math.isnan(surplus) else surplus
        return grid
    finally:
        if own:
            fh.close()
