"""Feynman-Kac maps, their normalized semigroups and contraction constants.

A :class:`FeynmanKacModel` on levels ``0..m`` carries potentials ``G_l`` on
``S^(l)`` and Markov transitions ``L_l`` from ``S^(l-1)`` to ``S^(l)``.  The
one-step map is selection then mutation::

    Phi_{l+1}(mu)(f) = mu(G_l L_{l+1} f) / mu(G_l)

``Q_l(f) = G_{l-1} L_l(f)`` and ``Q_{l,k} = Q_l ... Q_k``; the normalized
semigroup ``P_{l,k}(f) = Q_{l,k}(f) / Q_{l,k}(1)`` is a Markov kernel from
``S^(l-1)`` to ``S^(k)`` whose Dobrushin coefficient controls the stability
of the time averaged flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegeneratePotentialError, InvalidParameterError, SpaceMismatchError
from .measures import (
    DiscreteMeasure,
    FiniteKernel,
    StateSpace,
    boltzmann_gibbs,
    check_stochastic,
    dobrushin,
    dobrushin_coefficient,
)

__all__ = [
    "FiniteKernel",
    "FeynmanKacModel",
    "RegularityConstants",
    "phi_step",
    "phi_weights",
    "phi_batch",
    "q_apply",
    "q_matrix",
    "p_matrix",
    "semigroup_p",
    "h_ratio",
    "beta_p",
    "minorization_constant",
    "mixing_constants",
    "contraction_bound",
    "simple_contraction_bound",
    "time_averaged_phi",
    "phi_bar_semigroup",
]


@dataclass(frozen=True, eq=False)
class FeynmanKacModel:
    """Finite Feynman-Kac flow on levels ``0..m``.

    Parameters
    ----------
    spaces : sequence of StateSpace
        ``S^(0), ..., S^(m)``.
    initial : DiscreteMeasure
        ``pi^(0)`` on ``S^(0)``.
    potentials : sequence of arrays
        ``G_0, ..., G_{m-1}`` (an extra ``G_m`` is accepted and kept).
    transitions : sequence of FiniteKernel
        ``L_1, ..., L_m``; ``transitions[l - 1]`` maps ``S^(l-1)`` to ``S^(l)``.
    path_dims : sequence of int, optional
        For path-space models, ``|E'_l|`` for every level.  A state of
        ``S^(l)`` with index ``i`` then encodes the pair
        ``(i // |E'_l|, i % |E'_l|)`` = (prefix in ``S^(l-1)``, last coordinate).
    base_kernel : array, optional
        ``M^(0)``, a Markov kernel on ``S^(0)`` leaving ``pi^(0)`` invariant.
        Defaults to independent draws from ``pi^(0)``.
    """

    spaces: tuple
    initial: DiscreteMeasure
    potentials: tuple
    transitions: tuple
    path_dims: Optional[tuple] = None
    base_kernel: Optional[np.ndarray] = None
    name: str = "model"

    def __post_init__(self):
        spaces = tuple(self.spaces)
        m = len(spaces) - 1
        if m < 0:
            raise InvalidParameterError("a model needs at least one level")
        if not self.initial.space.same_as(spaces[0]):
            raise SpaceMismatchError("initial measure must live on S^(0)")
        if not self.initial.is_probability():
            raise ValueError("initial measure must be a probability")
        pots = tuple(np.array(g, dtype=float) for g in self.potentials)
        if len(pots) < m:
            raise InvalidParameterError(f"need {m} potentials, got {len(pots)}")
        for l, g in enumerate(pots):
            if g.shape != (len(spaces[l]),):
                raise SpaceMismatchError(f"potential G_{l} does not match S^({l})")
            if not np.all(g > 0) or not np.all(np.isfinite(g)):
                raise ValueError(f"potential G_{l} must be strictly positive and finite")
            g.setflags(write=False)
        trans = []
        for l, L in enumerate(self.transitions, start=1):
            if not isinstance(L, FiniteKernel):
                L = FiniteKernel(spaces[l - 1], spaces[l], L)
            if not (L.source.same_as(spaces[l - 1]) and L.target.same_as(spaces[l])):
                raise SpaceMismatchError(f"L_{l} must map S^({l - 1}) to S^({l})")
            trans.append(L)
        if len(trans) != m:
            raise InvalidParameterError(f"need {m} transitions, got {len(trans)}")
        base = self.base_kernel
        if base is not None:
            base = np.array(base, dtype=float)
            check_stochastic(base)
            if base.shape != (len(spaces[0]),) * 2:
                raise SpaceMismatchError("M^(0) must be square on S^(0)")
            base.setflags(write=False)
        if self.path_dims is not None:
            dims = tuple(int(d) for d in self.path_dims)
            if len(dims) != m + 1 or dims[0] != len(spaces[0]):
                raise InvalidParameterError("path_dims must list |E'_l| for every level")
            for l in range(1, m + 1):
                if len(spaces[l]) != len(spaces[l - 1]) * dims[l]:
                    raise InvalidParameterError(f"|S^({l})| must equal |S^({l - 1})| * |E'_{l}|")
            object.__setattr__(self, "path_dims", dims)
        object.__setattr__(self, "spaces", spaces)
        object.__setattr__(self, "potentials", pots)
        object.__setattr__(self, "transitions", tuple(trans))
        object.__setattr__(self, "base_kernel", base)

    @property
    def m(self) -> int:
        """Index of the last level."""
        return len(self.spaces) - 1

    @property
    def is_path_space(self) -> bool:
        return self.path_dims is not None

    def size(self, l: int) -> int:
        return len(self.spaces[l])

    def G(self, l: int) -> np.ndarray:
        return self.potentials[l]

    def L(self, l: int) -> np.ndarray:
        """Matrix of ``L_l`` (``1 <= l <= m``)."""
        if not 1 <= l <= self.m:
            raise InvalidParameterError(f"L_{l} undefined for levels 0..{self.m}")
        return self.transitions[l - 1].rows

    def M0(self) -> np.ndarray:
        if self.base_kernel is not None:
            return self.base_kernel
        return np.tile(self.initial.weights, (self.size(0), 1))

    def mutation_rows(self, l: int) -> np.ndarray:
        """``R~_l(u, z) = L_l(u, (u, z))`` for path models: the last-coordinate law."""
        d = self.path_dims[l]
        L = self.L(l)
        u = np.arange(self.size(l - 1))
        return L[u[:, None], u[:, None] * d + np.arange(d)[None, :]]


def phi_weights(w: np.ndarray, model: FeynmanKacModel, l: int) -> np.ndarray:
    """``Phi_{l+1}`` on a raw weight vector over ``S^(l)``."""
    g = np.asarray(w, dtype=float) * model.G(l)
    z = g.sum()
    if not z > 0:
        raise DegeneratePotentialError(f"mu(G_{l}) = 0")
    return (g / z) @ model.L(l + 1)


def phi_batch(W: np.ndarray, model: FeynmanKacModel, l: int) -> np.ndarray:
    """Row-wise ``Phi_{l+1}`` of a stack of (unnormalized) weights ``(R, |S^(l)|)``.

    Uses multiply-and-sum rather than BLAS so every row is reduced in the
    same order whatever the batch size (bit-reproducible replicates).
    """
    g = np.asarray(W, dtype=float) * model.G(l)[None, :]
    z = g.sum(axis=1)
    if np.any(~(z > 0)):
        raise DegeneratePotentialError(f"mu(G_{l}) = 0")
    g = g / z[:, None]
    return (g[:, :, None] * model.L(l + 1)[None, :, :]).sum(axis=1)


def phi_step(mu: DiscreteMeasure, model: FeynmanKacModel, l: int) -> DiscreteMeasure:
    """``Phi_{l+1}(mu)``: Boltzmann-Gibbs selection by ``G_l`` then transport by ``L_{l+1}``."""
    if not mu.space.same_as(model.spaces[l]):
        raise SpaceMismatchError(f"measure does not live on S^({l})")
    selected = boltzmann_gibbs(mu, model.G(l))
    return model.transitions[l].push(selected)


def q_apply(model: FeynmanKacModel, l: int, f) -> np.ndarray:
    """``Q_l(f) = G_{l-1} * L_l(f)``, a function on ``S^(l-1)``."""
    if not 1 <= l <= model.m:
        raise InvalidParameterError(f"Q_{l} needs 1 <= l <= {model.m}")
    return model.G(l - 1) * (model.L(l) @ np.asarray(f, dtype=float))


def _check_lk(model: FeynmanKacModel, l: int, k: int) -> None:
    if not (1 <= l <= k <= model.m):
        raise InvalidParameterError(f"need 1 <= l <= k <= {model.m}, got l={l}, k={k}")


def q_matrix(model: FeynmanKacModel, l: int, k: int) -> np.ndarray:
    """Matrix of ``Q_{l,k} = Q_l Q_{l+1} ... Q_k`` (``S^(l-1)`` rows, ``S^(k)`` columns)."""
    _check_lk(model, l, k)
    Q = model.G(l - 1)[:, None] * model.L(l)
    for j in range(l + 1, k + 1):
        Q = (Q * model.G(j - 1)[None, :]) @ model.L(j)
    return Q


def p_matrix(model: FeynmanKacModel, l: int, k: int) -> np.ndarray:
    """Row-stochastic matrix of ``P_{l,k}``.

    Rows are renormalized after every factor; row scaling cancels in the
    ratio, so long products neither underflow nor overflow.
    """
    _check_lk(model, l, k)
    P = model.L(l).copy()
    for j in range(l + 1, k + 1):
        P = (P * model.G(j - 1)[None, :]) @ model.L(j)
        P /= P.sum(axis=1, keepdims=True)
    return P


def semigroup_p(model: FeynmanKacModel, l: int, k: int, f) -> np.ndarray:
    """``P_{l,k}(f) = Q_{l,k}(f) / Q_{l,k}(1)``."""
    Q = q_matrix(model, l, k)
    norm = Q.sum(axis=1)
    assert np.all(norm > 0), "Q_{l,k}(1) vanished despite positive potentials"
    return (Q @ np.asarray(f, dtype=float)) / norm


def h_ratio(model: FeynmanKacModel, l: int, k: int) -> np.ndarray:
    """``H_{l,k} = Q_{l,k}(1) / Q_{l,k-1}(1)`` with ``Q_{l,l-1}(1) = 1``."""
    _check_lk(model, l, k)
    num = q_matrix(model, l, k).sum(axis=1)
    den = np.ones(model.size(l - 1)) if k == l else q_matrix(model, l, k - 1).sum(axis=1)
    return num / den


def beta_p(model: FeynmanKacModel, l: int, k: int) -> float:
    """Exact Dobrushin coefficient of ``P_{l,k}``, rows evaluated at Dirac inputs."""
    return min(1.0, dobrushin_coefficient(p_matrix(model, l, k)))


def minorization_constant(K: np.ndarray) -> float:
    """Largest ``eps`` with ``K(x, .) >= eps K(y, .)`` for all rows ``x, y``.

    Entry ratios ``0/0`` are ignored; ``0/positive`` gives zero.
    """
    K = np.asarray(K, dtype=float)
    num = K[:, None, :]
    den = K[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    eps = float(ratio.min())
    return min(1.0, eps) if np.isfinite(eps) else 1.0


@dataclass
class RegularityConstants:
    """Per-level regularity constants and their uniform aggregates.

    ``eps_G[l]`` is defined for ``l < m``, ``eps_L[l]`` for ``l <= m - window``
    and ``c, n, b, Lambda`` for every level (level 0 is the base chain).
    ``Lambda`` is a surrogate (see ``lambda_rule``); ``A`` and ``B`` inherit it.
    """

    window: int
    eps_G: np.ndarray
    eps_L: np.ndarray
    c: np.ndarray
    n: np.ndarray
    b: np.ndarray
    Lambda: np.ndarray
    A: float
    B: float
    lambda_rule: str = "max(1, c_l)"
    kinds: tuple = field(default_factory=tuple)

    @property
    def eps_L_inf(self) -> float:
        return float(self.eps_L.min()) if len(self.eps_L) else 1.0

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "eps_G": self.eps_G.tolist(),
            "eps_L": self.eps_L.tolist(),
            "c": self.c.tolist(),
            "n": self.n.tolist(),
            "b": self.b.tolist(),
            "Lambda": self.Lambda.tolist(),
            "A": self.A,
            "B": self.B,
            "lambda_rule": self.lambda_rule,
            "lambda_is_surrogate": True,
            "kinds": list(self.kinds),
        }


def _base_constants(M0: np.ndarray, max_power: int = 64) -> tuple[int, float]:
    K = np.eye(M0.shape[0])
    for n in range(1, max_power + 1):
        K = K @ M0
        b = dobrushin_coefficient(K)
        if b < 1.0:
            return n, b
    return max_power, 1.0


def mixing_constants(model: FeynmanKacModel, m_window: int = 1, specs: Sequence | None = None,
                     Lambda=None) -> RegularityConstants:
    """Regularity constants of a finite model.

    Parameters
    ----------
    model : FeynmanKacModel
    m_window : int
        Window of the mixing condition: ``eps_L[l]`` minorizes the
        ``m_window``-step kernel ``L_{l+1} ... L_{l+m_window}``.
    specs : sequence, optional
        Level kernel specs (see :mod:`imcmc.samplers`).  Levels with a
        Metropolis-Hastings spec use ``c_l = 2`` and
        ``b_l = 1 - 1/C_l``; all others are direct ``Phi`` sampling with
        ``n_l = 1``, ``b_l = 0`` and ``c_l = beta(L_l) / eps_{l-1}(G)``.
    Lambda : float or sequence, optional
        Overrides the surrogate ``Lambda_l = max(1, c_l)``.
    """
    if m_window < 1:
        raise InvalidParameterError("m_window must be >= 1")
    m = model.m
    eps_G = np.array([model.G(l).min() / model.G(l).max() for l in range(m)])
    eps_L = []
    for l in range(0, m - m_window + 1):
        K = model.L(l + 1)
        for j in range(l + 2, l + m_window + 1):
            K = K @ model.L(j)
        eps_L.append(minorization_constant(K))
    eps_L = np.array(eps_L)

    n0, b0 = _base_constants(model.M0())
    c = [0.0]
    n = [n0]
    b = [b0]
    kinds = ["base"]
    for l in range(1, m + 1):
        spec = specs[l] if specs is not None and l < len(specs) else None
        if spec is not None and getattr(spec, "kind", None) == "mh":
            from .samplers import mh_dobrushin_bound

            c.append(2.0)
            n.append(1)
            b.append(mh_dobrushin_bound(model, l, spec.proposal))
            kinds.append("mh")
        else:
            c.append(dobrushin(model.L(l)) / eps_G[l - 1])
            n.append(1)
            b.append(0.0)
            kinds.append("direct")
    c = np.array(c)
    n = np.array(n, dtype=int)
    b = np.array(b)
    if Lambda is None:
        Lam = np.maximum(1.0, c)
        rule = "max(1, c_l)"
    else:
        Lam = np.broadcast_to(np.asarray(Lambda, dtype=float), c.shape).copy()
        rule = "configured"
    with np.errstate(divide="ignore"):
        A = float(np.max((1.0 + c) * (n / (1.0 - b)) ** 2))
    B = float(2.0 * Lam[1:].max()) if m >= 1 else 0.0
    return RegularityConstants(m_window, eps_G, eps_L, c, n, b, Lam, A, B, rule, tuple(kinds))


def contraction_bound(model: FeynmanKacModel, l: int, k: int, m_window: int = 1,
                      constants: RegularityConstants | None = None) -> float:
    """Upper bound on ``beta(P_{l,k})`` from the mixing constants.

    With ``K = k - l + 1`` factors and base level ``p = l - 1``::

        beta(P_{l,k}) <= prod_{i < K // m} (1 - eps_L[p + i m]^2 * prod_{p+im < j < p+(i+1)m} eps_G[j])
    """
    _check_lk(model, l, k)
    if constants is None or constants.window != m_window:
        constants = mixing_constants(model, m_window)
    p = l - 1
    factors = k - l + 1
    bound = 1.0
    for i in range(factors // m_window):
        base = p + i * m_window
        eps = constants.eps_L[base] ** 2
        for j in range(base + 1, base + m_window):
            eps *= constants.eps_G[j]
        bound *= 1.0 - eps
    return float(bound)


def simple_contraction_bound(eps_L: float, k: int) -> float:
    """``(1 - eps(L)^2)^k`` for the one-step mixing case."""
    return float((1.0 - eps_L**2) ** k)


def time_averaged_phi(flow: Sequence[DiscreteMeasure], model: FeynmanKacModel, l: int) -> list:
    """Cesaro averages ``(1/(n+1)) sum_{p<=n} Phi_l(eta_p)`` for every prefix of ``flow``."""
    if l < 1:
        raise InvalidParameterError("time averaged maps are defined for l >= 1")
    out = []
    acc = None
    for n, eta in enumerate(flow):
        w = phi_step(eta, model, l - 1).weights
        acc = w.copy() if acc is None else acc + w
        out.append(DiscreteMeasure(model.spaces[l], acc / (n + 1)))
    return out


def phi_bar_semigroup(flow: Sequence[DiscreteMeasure], model: FeynmanKacModel, l: int, k: int) -> list:
    """Composition ``Phi_bar^(k) o ... o Phi_bar^(l)`` applied to a flow on ``S^(l-1)``."""
    _check_lk(model, l, k)
    for j in range(l, k + 1):
        flow = time_averaged_phi(flow, model, j)
    return flow
