"""Finite measures, occupation measures, kernels and their norms.

Everything here lives on finite, explicitly enumerated state spaces.  A
measure is a weight vector indexed by the points of a :class:`StateSpace`;
a kernel is a row-stochastic matrix between two spaces.  Total variation is
the plain L1 distance ``sum_i |mu_i - nu_i|`` so that two distinct Diracs
are at distance 2.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence, Union

import numpy as np

from .errors import (
    DegeneratePotentialError,
    DesyncError,
    InvalidKernelError,
    SpaceMismatchError,
    TooLargeError,
)

PROB_TOL = 1e-12
DRIFT_TOL = 1e-9
KERNEL_TOL = 1e-10
ENUMERATION_GUARD = 10**7


@dataclass(frozen=True, eq=False)
class StateSpace:
    """An ordered finite set of distinct state labels.

    Parameters
    ----------
    id : int
        Level index the space belongs to.
    points : sequence of hashable
        State labels.  Their order fixes the index of every state.
    """

    id: int
    points: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = tuple(self.points)
        if len(points) == 0:
            raise ValueError("a state space needs at least one point")
        index = {p: i for i, p in enumerate(points)}
        if len(index) != len(points):
            raise ValueError("state labels must be distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "_index", index)

    @classmethod
    def range(cls, id: int, size: int) -> "StateSpace":
        return cls(id, tuple(range(size)))

    def __len__(self) -> int:
        return len(self.points)

    def __contains__(self, x) -> bool:
        return x in self._index

    def index(self, x: Hashable) -> int:
        try:
            return self._index[x]
        except (KeyError, TypeError):
            raise SpaceMismatchError(f"state {x!r} is not in space {self.id}") from None

    def same_as(self, other: "StateSpace") -> bool:
        return self is other or (self.id == other.id and self.points == other.points)

    def __eq__(self, other):
        return isinstance(other, StateSpace) and self.same_as(other)

    def __hash__(self):
        return hash((self.id, self.points))


def _check_space(a: StateSpace, b: StateSpace) -> None:
    if not a.same_as(b):
        raise SpaceMismatchError(f"measures live on different spaces ({a.id} vs {b.id})")


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """A finite (possibly signed) measure on a :class:`StateSpace`."""

    space: StateSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (len(self.space),):
            raise SpaceMismatchError(
                f"weight vector of shape {w.shape} does not match space of size {len(self.space)}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, space: StateSpace, x) -> "DiscreteMeasure":
        w = np.zeros(len(space))
        w[space.index(x)] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: StateSpace) -> "DiscreteMeasure":
        return cls(space, np.full(len(space), 1.0 / len(space)))

    @classmethod
    def probability(cls, space: StateSpace, weights) -> "DiscreteMeasure":
        """Build a probability measure, renormalizing drift up to ``DRIFT_TOL``."""
        return cls(space, normalize_probability(weights))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = PROB_TOL) -> bool:
        return bool(np.all(self.weights >= 0) and abs(self.mass - 1.0) <= tol)

    def __getitem__(self, x) -> float:
        return float(self.weights[self.space.index(x)])

    def __sub__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        _check_space(self.space, other.space)
        return DiscreteMeasure(self.space, self.weights - other.weights)


def normalize_probability(weights, drift_tol: float = DRIFT_TOL) -> np.ndarray:
    """Renormalize a weight vector whose mass is within ``drift_tol`` of one."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("probability weights must be nonnegative")
    s = w.sum()
    if abs(s - 1.0) > drift_tol:
        raise ValueError(f"probability weights sum to {s!r}, not 1")
    return w / s


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """A row-stochastic matrix from ``source`` to ``target``.

    Rows are validated at construction: nonnegative, summing to one within
    ``KERNEL_TOL``.  Row drift below that tolerance is renormalized away.
    """

    source: StateSpace
    target: StateSpace
    rows: np.ndarray

    def __post_init__(self):
        m = np.array(self.rows, dtype=float)
        if m.shape != (len(self.source), len(self.target)):
            raise SpaceMismatchError(
                f"kernel of shape {m.shape} does not match spaces "
                f"{len(self.source)} x {len(self.target)}"
            )
        check_stochastic(m)
        m = m / m.sum(axis=1, keepdims=True)
        m.setflags(write=False)
        object.__setattr__(self, "rows", m)

    @classmethod
    def identity(cls, space: StateSpace) -> "FiniteKernel":
        return cls(space, space, np.eye(len(space)))

    def __matmul__(self, other: "FiniteKernel") -> "FiniteKernel":
        _check_space(self.target, other.source)
        return FiniteKernel(self.source, other.target, self.rows @ other.rows)

    def apply(self, f) -> np.ndarray:
        """Function action ``K(f)(x) = sum_y K(x, y) f(y)``."""
        return self.rows @ np.asarray(f, dtype=float)

    def push(self, mu: DiscreteMeasure) -> DiscreteMeasure:
        """Measure action ``mu K``."""
        _check_space(mu.space, self.source)
        return DiscreteMeasure(self.target, mu.weights @ self.rows)

    def power(self, n: int) -> "FiniteKernel":
        _check_space(self.source, self.target)
        return FiniteKernel(self.source, self.target, np.linalg.matrix_power(self.rows, n))


def check_stochastic(m: np.ndarray, tol: float = KERNEL_TOL) -> None:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidKernelError("a kernel must be a 2-d matrix")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        bad = np.argwhere((m < 0) | ~np.isfinite(m))[0]
        raise InvalidKernelError(f"kernel entry {tuple(int(i) for i in bad)} is negative or not finite")
    sums = m.sum(axis=1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > tol):
        row = int(np.argmax(dev))
        raise InvalidKernelError(f"kernel row {row} sums to {float(sums[row])!r}")


def _as_matrix(K: Union[FiniteKernel, np.ndarray]) -> np.ndarray:
    return K.rows if isinstance(K, FiniteKernel) else np.asarray(K, dtype=float)


def total_variation(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Total variation norm ``||mu - nu|| = sum_i |mu_i - nu_i|`` (in ``[0, 2]`` for probabilities)."""
    _check_space(mu.space, nu.space)
    return float(np.abs(mu.weights - nu.weights).sum())


def integrate(mu: DiscreteMeasure, f: Union[Callable, Sequence[float], np.ndarray]) -> float:
    """``mu(f)``; ``f`` is either a callable on labels or a vector indexed like the space."""
    if callable(f):
        values = np.array([f(x) for x in mu.space.points], dtype=float)
    else:
        values = np.asarray(f, dtype=float)
        if values.shape != mu.weights.shape:
            raise SpaceMismatchError("function vector does not match the space")
    return float(mu.weights @ values)


def dobrushin_coefficient(m: np.ndarray) -> float:
    """``(1/2) max_{x,y} sum_z |m(x,z) - m(y,z)|`` for any constant-mass matrix.

    No stochasticity check; used for Poisson operators and semigroup rows.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[0] < 2:
        return 0.0
    diffs = np.abs(m[:, None, :] - m[None, :, :]).sum(axis=2)
    return float(0.5 * diffs.max())


def dobrushin_batch(m: np.ndarray) -> np.ndarray:
    """Dobrushin coefficients of a stack of matrices with shape ``(B, n, k)``."""
    m = np.asarray(m, dtype=float)
    diffs = np.abs(m[:, :, None, :] - m[:, None, :, :]).sum(axis=3)
    return 0.5 * diffs.max(axis=(1, 2))


def dobrushin(K: Union[FiniteKernel, np.ndarray]) -> float:
    """Dobrushin ergodicity coefficient of a stochastic kernel, in ``[0, 1]``."""
    m = _as_matrix(K)
    check_stochastic(m)
    return min(1.0, dobrushin_coefficient(m))


def boltzmann_gibbs(mu: DiscreteMeasure, G) -> DiscreteMeasure:
    """Reweight ``mu`` by the potential ``G`` and renormalize."""
    g = np.array([G(x) for x in mu.space.points], dtype=float) if callable(G) else np.asarray(G, dtype=float)
    if g.shape != mu.weights.shape:
        raise SpaceMismatchError("potential does not match the space")
    if np.any(g < 0):
        raise ValueError("potentials must be nonnegative")
    w = mu.weights * g
    z = w.sum()
    if not z > 0:
        raise DegeneratePotentialError("mu(G) = 0")
    return DiscreteMeasure(mu.space, w / z)


class OccupationMeasure:
    """Counting measure of the states visited by one chain.

    Holds integer visit counts and, when ``keep_history`` is true, the
    sequence of visited state indices (needed for joint path-space
    occupation measures).  Mutated in place only through :meth:`push`.
    """

    def __init__(self, space: StateSpace, counts=None, history: Iterable[int] | None = None,
                 keep_history: bool = True):
        self.space = space
        self.counts = np.zeros(len(space), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        if self.counts.shape != (len(space),) or np.any(self.counts < 0):
            raise SpaceMismatchError("counts do not match the space")
        self.history = None
        if history is not None:
            self.history = list(history)
            if len(self.history) != self.total:
                raise DesyncError("history length differs from total count")
        elif keep_history and self.counts.sum() == 0:
            self.history = []

    @classmethod
    def from_states(cls, space: StateSpace, states: Iterable) -> "OccupationMeasure":
        eta = cls(space)
        for x in states:
            eta.push(x)
        return eta

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def push(self, x) -> "OccupationMeasure":
        i = self.space.index(x)
        self.counts[i] += 1
        if self.history is not None:
            self.history.append(i)
        return self

    def copy(self) -> "OccupationMeasure":
        return OccupationMeasure(self.space, self.counts.copy(),
                                 None if self.history is None else list(self.history),
                                 keep_history=self.history is not None)

    def measure(self) -> DiscreteMeasure:
        if self.total == 0:
            raise DesyncError("empty occupation measure")
        return DiscreteMeasure(self.space, self.counts / self.total)

    def __getitem__(self, x) -> float:
        return self.counts[self.space.index(x)] / self.total


def occupation_push(eta: OccupationMeasure, x) -> OccupationMeasure:
    """Return a new occupation measure with one more visit to ``x``."""
    return eta.copy().push(x)


def product_space(spaces: Sequence[StateSpace], guard: int = ENUMERATION_GUARD) -> StateSpace:
    if len(spaces) == 1:
        return spaces[0]
    size = int(np.prod([len(s) for s in spaces], dtype=float))
    if size > guard:
        raise TooLargeError(f"product space of {size} points exceeds guard {guard}")
    return StateSpace(spaces[-1].id, tuple(itertools.product(*(s.points for s in spaces))))


def product_occupation(etas: Sequence[OccupationMeasure], guard: int = ENUMERATION_GUARD) -> OccupationMeasure:
    """Joint occupation measure of the path-space points ``(X_p^(0), ..., X_p^(m))``."""
    totals = {eta.total for eta in etas}
    if len(totals) != 1:
        raise DesyncError(f"occupation totals differ across levels: {sorted(totals)}")
    if any(eta.history is None for eta in etas):
        raise DesyncError("joint occupation needs the visit history of every level")
    if len(etas) == 1:
        return etas[0].copy()
    joint = product_space([eta.space for eta in etas], guard)
    sizes = [len(eta.space) for eta in etas]
    strides = np.cumprod([1] + sizes[::-1][:-1])[::-1]
    idx = sum(np.asarray(eta.history, dtype=np.int64) * s for eta, s in zip(etas, strides))
    counts = np.bincount(idx, minlength=len(joint)) if len(idx) else np.zeros(len(joint), dtype=np.int64)
    return OccupationMeasure(joint, counts, history=[int(i) for i in idx])
