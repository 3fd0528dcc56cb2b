"""Real-valued Feynman-Kac flows sampled through callbacks.

Nothing here enumerates the state space: occupation measures are stored as
the raw visited points and only direct ``Phi`` sampling is offered.  There
is no exact oracle, so errors are measured against a large particle run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .diagnostics import DEFAULT_CHECKPOINTS, DiagnosticsSeries
from .errors import InvalidParameterError
from .rng import UniformBlocks, stream

REFERENCE_STREAM = 1 << 22


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    """Flow on the real line defined by callbacks.

    ``sample_initial(u)`` maps uniforms to draws from ``pi^(0)``;
    ``potential(l, x)`` evaluates ``G_l``; ``mutate(l, x, u)`` draws from
    ``L_l(x, .)`` with uniforms ``u`` of the same shape as ``x``.
    """

    levels: int
    sample_initial: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[int, np.ndarray], np.ndarray]
    mutate: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    name: str = "continuous"
    eps_L: float | None = None
    eps_G: float | None = None

    @property
    def m(self) -> int:
        return self.levels - 1


def laplace_quantile(u: np.ndarray, scale: float) -> np.ndarray:
    """Inverse CDF of a centred Laplace law with density ``exp(-|y| / scale) / (2 scale)``."""
    u = np.asarray(u, dtype=float)
    return np.where(u < 0.5, scale * np.log(2 * u), -scale * np.log(2 * (1 - u)))


def bilaplace_drift(x: np.ndarray) -> np.ndarray:
    """Bounded drift ``A(x) = (log 2 / 2) tanh(x)`` with oscillation ``log 2``."""
    return 0.5 * math.log(2.0) * np.tanh(x)


def bilaplace_minorization(c: float, osc: float) -> float:
    """Minorization constant ``exp(-c osc(A))`` of ``L(x, dy) = (c/2) exp(-c |y - A(x)|) dy``."""
    return math.exp(-c * osc)


def bilaplace(levels: int = 4, c: float = 1.0) -> ContinuousModel:
    """Gaussian start, ``G(x) = (1 + 1/(1 + x^2)) / 2`` and bi-Laplace mutations around a bounded drift."""
    def potential(l, x):
        return 0.5 + 0.5 / (1.0 + np.asarray(x) ** 2)

    def mutate(l, x, u):
        return bilaplace_drift(x) + laplace_quantile(u, 1.0 / c)

    return ContinuousModel(
        levels=levels,
        sample_initial=lambda u: ndtri(np.clip(u, 1e-300, 1 - 1e-16)),
        potential=potential,
        mutate=mutate,
        name="bilaplace-continuous",
        eps_L=bilaplace_minorization(c, math.log(2.0)),
        eps_G=0.5,
    )


def grid_minorization(model: ContinuousModel, c: float = 1.0, grid: np.ndarray | None = None) -> float:
    """Empirical ``inf_{x, x', y} L(x, y) / L(x', y)`` of the bi-Laplace kernel over a grid."""
    grid = np.linspace(-20, 20, 401) if grid is None else np.asarray(grid, dtype=float)
    a = bilaplace_drift(grid)
    y = np.linspace(-25, 25, 1001)
    logd = -c * np.abs(y[None, :] - a[:, None])
    return float(np.exp((logd[:, None, :] - logd[None, :, :]).min()))


def reference_functions() -> tuple[list, list]:
    funcs = [np.tanh, lambda x: (np.asarray(x) > 0).astype(float), lambda x: np.exp(-np.asarray(x) ** 2)]
    return funcs, ["tanh", "positive", "gauss"]


def particle_reference(model: ContinuousModel, N: int = 400_000, seed: int = 0, functions=None) -> np.ndarray:
    """Reference values ``pi^(l)(f)`` from one large particle run, shape ``(levels, F)``."""
    functions = reference_functions()[0] if functions is None else functions
    g = stream(seed, REFERENCE_STREAM)
    x = model.sample_initial(g.random(N))
    out = [[float(np.mean(f(x))) for f in functions]]
    for l in range(1, model.levels):
        w = model.potential(l - 1, x)
        cdf = np.cumsum(w)
        anc = np.minimum(np.searchsorted(cdf, g.random(N) * cdf[-1], side="right"), N - 1)
        x = model.mutate(l, x[anc], g.random(N))
        out.append([float(np.mean(f(x))) for f in functions])
    return np.array(out)


def simulate_continuous(model: ContinuousModel, n_max: int = 2**12, replicates: int = 20, seed: int = 0,
                        checkpoints: Sequence[int] | None = None, reference: np.ndarray | None = None,
                        functions=None, names=None) -> DiagnosticsSeries:
    """Direct ``Phi`` i-MCMC with stored point clouds, scored against ``reference``."""
    if n_max < 1:
        raise InvalidParameterError("n_max must be >= 1")
    if functions is None:
        functions, names = reference_functions()
    if reference is None:
        reference = particle_reference(model, seed=seed, functions=functions)
    checkpoints = np.array([c for c in (DEFAULT_CHECKPOINTS if checkpoints is None else checkpoints) if c <= n_max])
    ids = np.arange(replicates)
    R, L = len(ids), model.levels
    points = np.zeros((L, R, n_max + 1))
    cumG = np.zeros((L, R, n_max + 1))
    streams = [UniformBlocks(seed, k, ids, 2) for k in range(L)]
    for k in range(L):
        u = streams[k].next()
        # nu_k: level 0 starts from pi^(0); higher levels from a standard Gaussian
        points[k, :, 0] = model.sample_initial(u[:, 0]) if k == 0 else ndtri(np.clip(u[:, 0], 1e-300, 1 - 1e-16))
        cumG[k, :, 0] = model.potential(k, points[k, :, 0])
    sums = np.zeros((L, R, len(functions)))
    for k in range(L):
        sums[k] = np.stack([f(points[k, :, 0]) for f in functions], axis=1)
    errs = [np.zeros((len(checkpoints), R, len(functions))) for _ in range(L)]
    ci = 0
    for n in range(n_max + 1):
        if ci < len(checkpoints) and n == checkpoints[ci]:
            for k in range(L):
                errs[k][ci] = sums[k] / (n + 1) - reference[k][None, :]
            ci += 1
        if n == n_max:
            break
        new = np.empty((L, R))
        for k in range(L):
            u = streams[k].next()
            if k == 0:
                new[0] = model.sample_initial(u[:, 0])
                continue
            target = u[:, 0] * cumG[k - 1, :, n]
            anc = np.array([min(np.searchsorted(cumG[k - 1, r, : n + 1], target[r], side="right"), n)
                            for r in range(R)])
            new[k] = model.mutate(k, points[k - 1, np.arange(R), anc], u[:, 1])
        for k in range(L):
            points[k, :, n + 1] = new[k]
            cumG[k, :, n + 1] = cumG[k, :, n] + model.potential(k, new[k])
            sums[k] += np.stack([f(new[k]) for f in functions], axis=1)
    return DiagnosticsSeries(checkpoints, list(range(L)), [list(names)] * L, errs, ids,
                             {"model": model.name, "seed": seed, "target": "particle reference",
                              "function_osc": [[2.0, 1.0, 1.0]] * L if names == reference_functions()[1] else None})
