"""Exact flows of finite Feynman-Kac models.

Two independent routes to the unnormalized measures ``gamma^(l)``:

* :func:`solve_flow` iterates ``pi^(l+1) = Phi_{l+1}(pi^(l))`` and multiplies
  the potential means, ``log gamma^(l)(1) = sum_{k<l} log pi^(k)(G_k)``;
* :func:`brute_force_gamma` sums over every path ``y_0 .. y_l`` of the
  reference chain.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import InvalidParameterError, TooLargeError
from .kernels import FeynmanKacModel, phi_step
from .measures import ENUMERATION_GUARD, DiscreteMeasure, product_space


@dataclass(frozen=True)
class ExactFlow:
    targets: tuple
    log_gamma1: np.ndarray
    potential_means: np.ndarray

    def gamma(self, l: int, f) -> float:
        """``gamma^(l)(f) = pi^(l)(f) * gamma^(l)(1)``."""
        return float(self.targets[l].weights @ np.asarray(f, dtype=float) * np.exp(self.log_gamma1[l]))

    def to_dict(self) -> dict:
        return {
            "targets": [t.weights.tolist() for t in self.targets],
            "log_gamma1": self.log_gamma1.tolist(),
            "potential_means": self.potential_means.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def solve_flow(model: FeynmanKacModel) -> ExactFlow:
    targets = [model.initial]
    means = []
    for l in range(model.m):
        means.append(float(targets[l].weights @ model.G(l)))
        targets.append(phi_step(targets[l], model, l))
    means = np.array(means)
    log_gamma = np.concatenate([[0.0], np.cumsum(np.log(means))])
    return ExactFlow(tuple(targets), log_gamma, means)


def brute_force_gamma(model: FeynmanKacModel, l: int, f, guard: int = ENUMERATION_GUARD) -> float:
    """``E[f(Y_l) prod_{k<l} G_k(Y_k)]`` by enumerating every path of the reference chain."""
    if not 0 <= l <= model.m:
        raise InvalidParameterError(f"level {l} outside 0..{model.m}")
    n_paths = float(np.prod([model.size(k) for k in range(l + 1)], dtype=float))
    if n_paths > guard:
        raise TooLargeError(f"{int(n_paths)} paths exceed guard {guard}")
    f = np.asarray(f, dtype=float)
    paths = np.array(list(itertools.product(*(range(model.size(k)) for k in range(l + 1)))), dtype=np.int64)
    weight = model.initial.weights[paths[:, 0]].copy()
    for k in range(l):
        weight *= model.G(k)[paths[:, k]]
        weight *= model.L(k + 1)[paths[:, k], paths[:, k + 1]]
    return float(np.sum(weight * f[paths[:, l]]))


def exact_path_target(model: FeynmanKacModel, m: int | None = None, guard: int = ENUMERATION_GUARD,
                      flow: ExactFlow | None = None) -> DiscreteMeasure:
    """Tensor product ``pi^(0) x ... x pi^(m)`` on ``E_m``."""
    m = model.m if m is None else m
    size = float(np.prod([model.size(k) for k in range(m + 1)], dtype=float))
    if size > guard:
        raise TooLargeError(f"product space of {int(size)} points exceeds guard {guard}")
    flow = solve_flow(model) if flow is None else flow
    space = product_space(model.spaces[: m + 1], guard)
    w = reduce(np.kron, [flow.targets[k].weights for k in range(m + 1)])
    return DiscreteMeasure(space, w)
