"""Invariant measures, Poisson operators and measure-indexed chains.

For an ergodic kernel ``K`` with invariant ``omega`` the Poisson operator is
the fundamental-matrix resolvent::

    P = sum_{n>=0} (K^n - 1 omega) = (I - K + 1 omega)^{-1} - 1 omega

which solves ``(K - I) P = 1 omega - I`` and ``omega P = 0``.  A
:class:`ChainDriver` is a family ``mu -> K_mu`` of kernels; the chain
``X_{n+1} ~ K_{mu_n}(X_n, .)`` is driven either by an external flow or by its
own occupation measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import DEFAULT_CHECKPOINTS, DiagnosticsSeries
from .errors import InvalidParameterError, NonErgodicError
from .kernels import FeynmanKacModel, phi_batch
from .measures import (
    DiscreteMeasure,
    FiniteKernel,
    StateSpace,
    check_stochastic,
    dobrushin_batch,
    dobrushin_coefficient,
)
from .rng import UniformBlocks, categorical

MAX_POWER = 64
N0_THRESHOLD = 0.95
MAX_STATES = 256


def _matrix(K) -> np.ndarray:
    m = K.rows if isinstance(K, FiniteKernel) else np.asarray(K, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidParameterError("kernel must be square")
    if m.shape[0] > MAX_STATES:
        raise InvalidParameterError(f"spaces are capped at {MAX_STATES} states")
    return m


def find_n0(K, threshold: float = N0_THRESHOLD, max_power: int = MAX_POWER) -> tuple[int, float]:
    """Smallest ``n0 <= max_power`` with ``beta(K^n0) <= threshold``."""
    m = _matrix(K)
    Kn = np.eye(m.shape[0])
    for n in range(1, max_power + 1):
        Kn = Kn @ m
        b = dobrushin_coefficient(Kn)
        if b <= threshold:
            return n, min(b, 1.0)
    raise NonErgodicError(f"beta(K^n) > {threshold} for every n <= {max_power}")


def stationary(m: np.ndarray) -> np.ndarray:
    """Stationary vector of an ergodic stochastic matrix (no ergodicity check)."""
    n = m.shape[0]
    A = m.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        w = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonErgodicError("singular invariant-measure system") from exc
    return w


def stationary_batch(Ks: np.ndarray) -> np.ndarray:
    """Stationary vectors of a stack ``(B, n, n)``; each system is solved independently."""
    B, n, _ = Ks.shape
    A = np.transpose(Ks, (0, 2, 1)) - np.eye(n)[None]
    A[:, -1, :] = 1.0
    rhs = np.zeros((B, n, 1))
    rhs[:, -1, 0] = 1.0
    return np.linalg.solve(A, rhs)[:, :, 0]


def invariant_measure(K) -> DiscreteMeasure:
    """Unique invariant probability of ``K``.

    Raises :class:`NonErgodicError` unless ``beta(K^n0) < 1`` for some
    ``n0 <= 64``.
    """
    m = _matrix(K)
    check_stochastic(m)
    find_n0(m, threshold=1.0 - 1e-15)
    w = stationary(m)
    w = np.clip(w, 0.0, None)
    space = K.source if isinstance(K, FiniteKernel) else StateSpace.range(0, m.shape[0])
    return DiscreteMeasure(space, w / w.sum())


@dataclass
class PoissonSolution:
    kernel: np.ndarray
    omega: DiscreteMeasure
    P: np.ndarray
    residuals: dict

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def poisson_solve(K) -> PoissonSolution:
    """Fundamental-matrix solution of the Poisson equation and its residuals."""
    m = _matrix(K)
    omega = invariant_measure(m)
    n = m.shape[0]
    one_omega = np.tile(omega.weights, (n, 1))
    I = np.eye(n)
    try:
        Z = np.linalg.solve(I - m + one_omega, I)
    except np.linalg.LinAlgError as exc:
        raise NonErgodicError("singular fundamental matrix") from exc
    P = Z - one_omega
    residuals = {
        "invariance": float(np.abs(omega.weights @ m - omega.weights).max()),
        "poisson": float(np.abs((m - I) @ P - (one_omega - I)).max()),
        "centering": float(np.abs(omega.weights @ P).max()),
    }
    return PoissonSolution(m, omega, P, residuals)


def poisson_series(K, n_terms: int) -> np.ndarray:
    """Truncated resolvent ``sum_{n<=N} (K^n - 1 omega)``."""
    m = _matrix(K)
    omega = invariant_measure(m).weights
    one_omega = np.tile(omega, (m.shape[0], 1))
    Kn = np.eye(m.shape[0])
    S = np.zeros_like(m)
    for _ in range(n_terms + 1):
        S += Kn - one_omega
        Kn = Kn @ m
    return S


def series_terms_for(K, tol: float) -> int:
    """Number of series terms after which the geometric tail is below ``tol``."""
    n0, b = find_n0(K)
    # |K^n - 1 omega| <= 2 beta(K^n) <= 2 b^(n // n0); tail over blocks of n0 terms
    if b == 0:
        return n0
    blocks = math.ceil(math.log(tol * (1 - b) / (2 * n0)) / math.log(b))
    return max(n0, (blocks + 1) * n0)


def alpha_interval(K, stop: float = 1e-14, max_terms: int = 100000) -> tuple[float, float]:
    """``alpha(K) = sum_n beta(K^n)`` as ``[partial sum, partial sum + tail bound]``."""
    m = _matrix(K)
    find_n0(m)
    terms = [1.0]
    Kn = np.eye(m.shape[0])
    while terms[-1] >= stop:
        if len(terms) > max_terms:
            raise NonErgodicError("alpha series did not converge")
        Kn = Kn @ m
        terms.append(min(1.0, dobrushin_coefficient(Kn)))
    N = len(terms) - 1
    tN = terms[-1]
    partial = float(np.sum(terms))
    # beta(K^(pN + r)) <= beta(K^N)^p beta(K^r) for p >= 1, 0 <= r < N
    tail = float(np.sum(terms[:N])) * tN / (1.0 - tN) if tN > 0 else 0.0
    return partial, partial + tail


def alpha_of(K) -> float:
    """Upper endpoint of :func:`alpha_interval`."""
    return alpha_interval(K)[1]


def operator_norm(D: np.ndarray) -> float:
    """``sup_x ||delta_x D||``: the largest absolute row sum."""
    return float(np.abs(D).sum(axis=1).max())


# measure-indexed kernel families


@dataclass
class ChainDriver:
    """A family ``mu -> K_mu`` of Markov kernels on ``E`` indexed by measures on ``F``.

    ``kernel_batch`` maps weights ``(B, |F|)`` to kernels ``(B, |E|, |E|)``.
    In ``"self"`` mode ``F = E`` and the chain is driven by its own
    occupation measure.
    """

    kernel_batch: Callable[[np.ndarray], np.ndarray]
    state_size: int
    driver_size: int
    mode: str = "self"
    name: str = "driver"
    certified: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("self", "external"):
            raise InvalidParameterError("mode must be 'self' or 'external'")
        if self.mode == "self" and self.state_size != self.driver_size:
            raise InvalidParameterError("self-interacting drivers need F = E")

    def kernel(self, mu) -> np.ndarray:
        w = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
        return self.kernel_batch(w[None, :])[0]


def constant_family(K, mode: str = "self") -> ChainDriver:
    m = _matrix(K)
    n = m.shape[0]
    return ChainDriver(lambda W: np.broadcast_to(m, (W.shape[0], n, n)).copy(), n, n, mode, "constant")


def direct_phi_family(model: FeynmanKacModel, l: int, mode: str = "self") -> ChainDriver:
    """``K_mu(x, .) = Phi_{l+1}(mu)`` for every ``x``: the direct sampling kernel."""
    n_out, n_in = model.size(l + 1), model.size(l)

    def batch(W):
        rows = phi_batch(W, model, l)
        return np.broadcast_to(rows[:, None, :], (W.shape[0], n_out, n_out)).copy()

    return ChainDriver(batch, n_out, n_in, mode, f"direct-phi[{l + 1}]")


def mixture_family(K, L, theta: float, mode: str = "self") -> ChainDriver:
    """``K_mu = (1 - theta) K + theta (1 x mu L)``."""
    K = _matrix(K)
    L = np.asarray(L, dtype=float)
    n = K.shape[0]
    if not 0 <= theta <= 1:
        raise InvalidParameterError("theta must lie in [0, 1]")

    def batch(W):
        rows = (W[:, :, None] * L[None, :, :]).sum(axis=1)
        return (1 - theta) * K[None] + theta * rows[:, None, :]

    return ChainDriver(batch, n, L.shape[0], mode, f"mixture[{theta}]")


def _random_simplex(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    # half Dirichlet(1) interior points, half sparse points near the boundary
    W = rng.dirichlet(np.ones(size), count)
    sparse = rng.dirichlet(np.full(size, 0.2), count)
    return np.where(np.arange(count)[:, None] % 2 == 0, W, sparse)


@dataclass
class LipschitzReport:
    family: str
    pairs: int
    n0: int
    c_hat: float
    b_hat: float
    max_e1_ratio: float
    max_p_ratio: float
    failures: list
    passed: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("family", "pairs", "n0", "c_hat", "b_hat", "max_e1_ratio", "max_p_ratio", "passed")} | {
            "failures": self.failures[:10]}


def _kernel_power_beta(K: np.ndarray, n0: int) -> float:
    return dobrushin_coefficient(np.linalg.matrix_power(K, n0))


def certify_constants(driver: ChainDriver, n0: int | None = None, samples: int = 200,
                      seed: int = 0) -> dict:
    """Estimate ``(n0, b(n0), c)`` over Dirac vertices and random measures.

    For families affine in ``mu`` the Dirac vertices make these exact: the
    Dobrushin coefficient is convex in ``mu`` and ``K_eta - K_mu`` is linear
    in ``eta - mu``.
    """
    rng = np.random.default_rng([seed, 7])
    F = driver.driver_size
    W = np.concatenate([np.eye(F), _random_simplex(rng, F, samples)])
    Ks = driver.kernel_batch(W)
    if n0 is None:
        n0 = max(find_n0(K)[0] for K in Ks)
    betas = dobrushin_batch(np.stack([np.linalg.matrix_power(K, n0) for K in Ks]))
    c = 0.0
    for i in range(F):
        for j in range(i + 1, F):
            c = max(c, operator_norm(Ks[i] - Ks[j]) / 2.0)
    idx = rng.integers(0, len(W), size=(samples, 2))
    for i, j in idx:
        d = np.abs(W[i] - W[j]).sum()
        if d > 1e-12:
            c = max(c, operator_norm(Ks[i] - Ks[j]) / d)
    return {"n0": int(n0), "b": float(min(1.0, betas.max())), "c": float(c)}


def lipschitz_certificates(driver: ChainDriver, samples: int = 200, seed: int = 0,
                           n0: int | None = None, tol: float = 1e-12) -> LipschitzReport:
    """Check the invariant-measure and Poisson-operator Lipschitz inequalities on random pairs."""
    rng = np.random.default_rng([seed, 11])
    F = driver.driver_size
    etas = _random_simplex(rng, F, samples)
    mus = _random_simplex(rng, F, samples)
    KE = driver.kernel_batch(etas)
    KM = driver.kernel_batch(mus)
    dist = np.abs(etas - mus).sum(axis=1)
    ratios = np.array([operator_norm(a - b) / d if d > 1e-15 else 0.0 for a, b, d in zip(KE, KM, dist)])
    c_hat = float(ratios.max()) if len(ratios) else 0.0
    failures = []
    max_e1 = max_p = 0.0
    b_hat = 0.0
    used_n0 = 0
    for i in range(samples):
        try:
            n_e, _ = find_n0(KE[i])
        except NonErgodicError as exc:
            raise NonErgodicError(f"{exc}; offending measure {etas[i].tolist()}") from None
        try:
            n_m, _ = find_n0(KM[i])
        except NonErgodicError as exc:
            raise NonErgodicError(f"{exc}; offending measure {mus[i].tolist()}") from None
        k0 = n0 if n0 is not None else min(n_e, n_m)
        used_n0 = max(used_n0, k0)
        be, bm = _kernel_power_beta(KE[i], k0), _kernel_power_beta(KM[i], k0)
        b_hat = max(b_hat, be, bm)
        low = min(be, bm)
        if low >= 1.0:
            continue
        delta = c_hat * k0 / (1.0 - low)
        sol_e, sol_m = poisson_solve(KE[i]), poisson_solve(KM[i])
        lhs = np.abs(sol_e.omega.weights - sol_m.omega.weights).sum()
        rhs = delta * dist[i]
        if lhs > rhs + tol:
            failures.append({"pair": i, "inequality": "invariant-measure", "lhs": lhs, "rhs": rhs})
        if rhs > 0:
            max_e1 = max(max_e1, lhs / rhs)
        a_e, a_m = alpha_of(KE[i]), alpha_of(KM[i])
        lhs_p = operator_norm(sol_m.P - sol_e.P)
        rhs_p = a_e * (2 * c_hat * a_m + delta) * dist[i]
        if lhs_p > rhs_p + tol:
            failures.append({"pair": i, "inequality": "poisson-operator", "lhs": lhs_p, "rhs": rhs_p})
        if rhs_p > 0:
            max_p = max(max_p, lhs_p / rhs_p)
    return LipschitzReport(driver.name, samples, used_n0, c_hat, float(b_hat), float(max_e1), float(max_p),
                           failures, not failures)


# inhomogeneous chains


def default_functions(size: int, seed: int = 20100701, level: int = 0) -> tuple[np.ndarray, list]:
    """Coordinate indicators plus one fixed random +-1 function (columns)."""
    rng = np.random.default_rng([seed, level])
    signs = rng.choice([-1.0, 1.0], size=size)
    if size > 1 and np.all(signs == signs[0]):
        signs[0] = -signs[0]
    F = np.concatenate([np.eye(size), signs[:, None]], axis=1)
    names = [f"ind{i}" for i in range(size)] + ["rand"]
    return F, names


@dataclass
class VariationLog:
    max_eps_ratio: float = 0.0
    max_eps_bar_ratio: float = 0.0


def run_inhomogeneous(driver: ChainDriver, flow=None, n_max: int = 2**14, replicates: int = 100,
                      seed: int = 0, checkpoints=None, functions=None, replicate_ids=None,
                      initial: Optional[np.ndarray] = None, log: VariationLog | None = None) -> DiagnosticsSeries:
    """Simulate ``X_{n+1} ~ K_{mu_n}(X_n, .)`` and record ``eta_n(f) - omega_bar_n(mu)(f)``.

    Parameters
    ----------
    flow : callable or array, optional
        External flow ``p -> mu_p`` (weights on ``F``) or an array of shape
        ``(n_max + 1, |F|)``.  Ignored in self-interacting mode, where
        ``mu_p`` is the chain's own occupation measure.
    """
    E = driver.state_size
    checkpoints = np.array([c for c in (DEFAULT_CHECKPOINTS if checkpoints is None else checkpoints) if c <= n_max])
    if functions is None:
        functions, names = default_functions(E)
    else:
        functions, names = np.asarray(functions[0], dtype=float), list(functions[1])
    ids = np.arange(replicates) if replicate_ids is None else np.asarray(replicate_ids)
    R = len(ids)
    self_mode = driver.mode == "self"
    if not self_mode and flow is None:
        raise InvalidParameterError("external mode needs a flow")
    if not self_mode and not callable(flow):
        flow_arr = np.asarray(flow, dtype=float)
        flow = lambda p: flow_arr[p]  # noqa: E731

    u_draw = UniformBlocks(seed, 0, ids, 2)
    init = np.full(E, 1.0 / E) if initial is None else np.asarray(initial, dtype=float)
    X = categorical(np.broadcast_to(init, (R, E)), u_draw.next()[:, 0])
    counts = np.zeros((R, E), dtype=np.int64)
    counts[np.arange(R), X] += 1
    omega_sum = np.zeros((R, E))
    out = np.zeros((len(checkpoints), R, functions.shape[1]))
    log = VariationLog() if log is None else log
    prev_mu = None
    eps_sum = np.zeros(R)
    ci = 0
    for n in range(n_max + 1):
        if self_mode:
            mu = counts / (n + 1)
            Ks = driver.kernel_batch(mu)
            omega = stationary_batch(Ks)
            if prev_mu is not None:
                eps = np.abs(mu - prev_mu).sum(axis=1)
                eps_sum += eps
                log.max_eps_ratio = max(log.max_eps_ratio, float(eps.max() * (n + 1) / 2))
                log.max_eps_bar_ratio = max(
                    log.max_eps_bar_ratio, float((eps_sum / n).max() / (2 * math.log(n + 1) / n)))
            prev_mu = mu
        else:
            mu = np.asarray(flow(n), dtype=float)
            K = driver.kernel_batch(mu[None, :])
            omega = np.broadcast_to(stationary_batch(K)[0], (R, E))
            Ks = np.broadcast_to(K[0], (R, E, E))
        omega_sum += omega
        if ci < len(checkpoints) and n == checkpoints[ci]:
            out[ci] = (counts / (n + 1) - omega_sum / (n + 1)) @ functions
            ci += 1
        if n == n_max:
            break
        rows = Ks[np.arange(R), X]
        X = categorical(rows, u_draw.next()[:, 0])
        counts[np.arange(R), X] += 1
    if log.max_eps_ratio > 1 + 1e-9 or log.max_eps_bar_ratio > 1 + 1e-9:
        raise AssertionError("occupation flow variations exceeded their bounds")
    return DiagnosticsSeries(checkpoints, [0], [names], [out], ids,
                             {"driver": driver.name, "mode": driver.mode, "seed": seed,
                              "target": "omega_bar", "function_osc": [np.ptp(functions, axis=0).tolist()]})
