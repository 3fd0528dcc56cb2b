"""Bundled models and the random model generator used by property tests."""

from __future__ import annotations

import itertools

import numpy as np

from .kernels import FeynmanKacModel
from .measures import DiscreteMeasure, StateSpace

FK3_L = np.array([
    [0.60, 0.30, 0.10],
    [0.20, 0.50, 0.30],
    [0.25, 0.25, 0.50],
])
FK3_G = (
    np.array([1.0, 2.0, 0.5]),
    np.array([0.5, 1.5, 1.0]),
    np.array([2.0, 1.0, 1.0]),
)


def fk3(levels: int = 4) -> FeynmanKacModel:
    """Canonical 3-state model: uniform ``pi^(0)``, one fixed positive ``L``, cycling potentials."""
    spaces = [StateSpace.range(l, 3) for l in range(levels)]
    pots = [FK3_G[l % 3] for l in range(levels - 1)]
    return FeynmanKacModel(
        spaces=spaces,
        initial=DiscreteMeasure.uniform(spaces[0]),
        potentials=pots,
        transitions=[FK3_L] * (levels - 1),
        name="fk3" if levels == 4 else f"fk3-{levels}",
    )


def fk3_deep() -> FeynmanKacModel:
    model = fk3(levels=9)
    object.__setattr__(model, "name", "fk3-deep")
    return model


def path_model(mutation: np.ndarray, potentials, initial, levels: int, name: str = "path") -> FeynmanKacModel:
    """Path-space model over ``E'_0 x ... x E'_l`` with a homogeneous auxiliary chain.

    ``S^(l)`` lists paths in lexicographic order, so the index of ``(u, z)``
    is ``index(u) * |E'| + z``.  ``L_l`` copies the prefix and moves the last
    coordinate with ``mutation``; ``G_l`` reads the last coordinate.
    """
    mutation = np.asarray(mutation, dtype=float)
    d = mutation.shape[0]
    spaces = [StateSpace(l, tuple(itertools.product(range(d), repeat=l + 1))) for l in range(levels)]
    trans = []
    for l in range(1, levels):
        n_prev = d**l
        L = np.zeros((n_prev, n_prev * d))
        u = np.arange(n_prev)
        last = u % d
        for z in range(d):
            L[u, u * d + z] = mutation[last, z]
        trans.append(L)
    pots = []
    for l in range(levels - 1):
        g_tilde = np.asarray(potentials[l % len(potentials)], dtype=float)
        pots.append(np.tile(g_tilde, d**l))
    return FeynmanKacModel(
        spaces=spaces,
        initial=DiscreteMeasure(spaces[0], initial),
        potentials=pots,
        transitions=trans,
        path_dims=(d,) * levels,
        name=name,
    )


def fk3_path(levels: int = 4) -> FeynmanKacModel:
    """The FK3 chain lifted to path space (``|S^(l)| = 3^(l+1)``)."""
    return path_model(FK3_L, FK3_G, np.full(3, 1 / 3), levels, name="fk3-path")


def fk3_path_proposal(model: FeynmanKacModel, l: int) -> np.ndarray:
    """Bundled MH proposal ``K_l(w, .) = (L~(w_last, .) + uniform) / 2``."""
    d = model.path_dims[l]
    return 0.5 * model.mutation_rows(l) + 0.5 / d


def metropolis_kernel(target: np.ndarray) -> np.ndarray:
    """Metropolis kernel reversible for ``target`` with uniform proposal over the other states."""
    target = np.asarray(target, dtype=float)
    n = len(target)
    K = np.zeros((n, n))
    for x in range(n):
        for y in range(n):
            if y != x:
                K[x, y] = min(1.0, target[y] / target[x]) / (n - 1)
        K[x, x] = 1.0 - K[x].sum()
    return K


ANNEALING_V = np.array([1.0, 0.0, 0.5])
ANNEALING_BETAS = (0.0, 1.0, 2.0, 4.0)


def annealing_target(V: np.ndarray, beta: float) -> np.ndarray:
    w = np.exp(-beta * (V - V.min()))
    return w / w.sum()


def annealing(V=ANNEALING_V, betas=ANNEALING_BETAS, name: str = "annealing-3state") -> FeynmanKacModel:
    """Tempering flow ``pi^(l) ~ exp(-beta_l V)`` as a Feynman-Kac model.

    ``G_l = exp(-(beta_{l+1} - beta_l) V)`` and ``L_{l+1}`` is Metropolis for
    ``pi^(l+1)``, so the exact flow is the Gibbs family itself.
    """
    V = np.asarray(V, dtype=float)
    spaces = [StateSpace.range(l, len(V)) for l in range(len(betas))]
    pots = [np.exp(-(betas[l + 1] - betas[l]) * V) for l in range(len(betas) - 1)]
    trans = [metropolis_kernel(annealing_target(V, betas[l])) for l in range(1, len(betas))]
    pi0 = annealing_target(V, betas[0])
    return FeynmanKacModel(
        spaces=spaces,
        initial=DiscreteMeasure(spaces[0], pi0),
        potentials=pots,
        transitions=trans,
        base_kernel=metropolis_kernel(pi0),
        name=name,
    )


def random_model(rng: np.random.Generator, n_states: int = 3, levels: int = 4) -> FeynmanKacModel:
    """Random finite model: uniform entries row-normalized, ``G`` log-uniform on ``[1/e, e]``."""
    spaces = [StateSpace.range(l, n_states) for l in range(levels)]
    pi0 = rng.uniform(size=n_states)
    trans = []
    for _ in range(levels - 1):
        L = rng.uniform(size=(n_states, n_states))
        trans.append(L / L.sum(axis=1, keepdims=True))
    pots = [np.exp(rng.uniform(-1.0, 1.0, size=n_states)) for _ in range(levels - 1)]
    return FeynmanKacModel(
        spaces=spaces,
        initial=DiscreteMeasure(spaces[0], pi0 / pi0.sum()),
        potentials=pots,
        transitions=trans,
        name="random",
    )


def random_kernel(rng: np.random.Generator, n: int) -> np.ndarray:
    K = rng.uniform(size=(n, n))
    return K / K.sum(axis=1, keepdims=True)


BUNDLED = {
    "fk3": (fk3, "3 states x 4 levels, fixed positive L, cycling potentials, uniform pi^(0)"),
    "fk3-deep": (fk3_deep, "the FK3 chain over 9 levels (uniform-in-level and stability studies)"),
    "fk3-path": (fk3_path, "FK3 lifted to path space E'_0 x ... x E'_l (Metropolis-Hastings kernels)"),
    "annealing-3state": (annealing, "tempering pi^(l) ~ exp(-beta_l V) on 3 states with Metropolis mutations"),
    "bilaplace-continuous": (None, "real-valued bi-Laplace mutations with bounded drift (continuous, no exact oracle)"),
}


def load_bundled(name: str):
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled model {name!r}; known: {sorted(BUNDLED)}")
    builder = BUNDLED[name][0]
    if builder is None:
        from .continuous import bilaplace

        return bilaplace()
    return builder()
