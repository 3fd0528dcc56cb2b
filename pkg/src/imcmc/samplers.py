"""Self-interacting samplers for Feynman-Kac flows.

The engine advances ``m + 1`` chains in lockstep.  At tick ``n`` every level
``k >= 1`` draws its next state from a kernel indexed by the occupation
measure of level ``k - 1`` at tick ``n`` (all levels read before any level
writes), and level 0 moves under a fixed kernel ``M^(0)``.  Replicates are
vectorized; each replicate owns one random stream per level, so its
trajectory does not depend on how replicates are batched.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional, Sequence

import numpy as np

from .diagnostics import DEFAULT_CHECKPOINTS, DiagnosticsSeries
from .errors import (
    AbsoluteContinuityError,
    ConfigError,
    DegeneratePotentialError,
    DesyncError,
    InvalidParameterError,
    SpaceMismatchError,
    TooLargeError,
)
from .exact_oracle import ExactFlow, solve_flow
from .kernels import FeynmanKacModel, phi_batch, phi_weights
from .measures import ENUMERATION_GUARD, DiscreteMeasure, OccupationMeasure
from .resolvent import default_functions
from .rng import UniformBlocks, categorical, categorical_many, categorical_rows, stream

SMC_STREAM = 1 << 20
HYBRID_STREAM = 1 << 21
JOINT_FUNCTION_CAP = 64


# level kernel specs


@dataclass(frozen=True)
class DirectPhi:
    """Draw ``X^(k)_{n+1}`` from ``Phi_k(eta^(k-1)_n)``, independently of ``X^(k)_n``."""

    kind: str = field(default="direct", init=False)


@dataclass(frozen=True, eq=False)
class MetropolisHastings:
    """Measure-indexed Metropolis-Hastings move on a path-space level.

    ``proposal`` has one row per prefix ``w`` in ``S^(l-1)`` and one column
    per last coordinate ``z``.
    """

    proposal: np.ndarray
    steps: int = 1
    kind: str = field(default="mh", init=False)

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidParameterError("MH step count must be >= 1")
        object.__setattr__(self, "proposal", np.asarray(self.proposal, dtype=float))


@dataclass(frozen=True, eq=False)
class BaseMCMC:
    """Level-0 chain with a fixed kernel (the model's ``M^(0)`` when omitted)."""

    kernel: Optional[np.ndarray] = None
    kind: str = field(default="base", init=False)


def default_specs(model: FeynmanKacModel) -> list:
    return [BaseMCMC()] + [DirectPhi() for _ in range(model.m)]


def _r_matrix(model: FeynmanKacModel, l: int) -> np.ndarray:
    """``R_l(w, z) = L~_l(w, z) G_{l-1}(w)``."""
    return model.mutation_rows(l) * model.G(l - 1)[:, None]


def validate_specs(model: FeynmanKacModel, specs: Sequence) -> list:
    specs = list(specs)
    if len(specs) != model.m + 1:
        raise ConfigError(f"need {model.m + 1} level specs, got {len(specs)}")
    if specs[0].kind != "base":
        raise ConfigError("level 0 must use a BaseMCMC spec")
    for l, s in enumerate(specs[1:], start=1):
        if s.kind == "base":
            raise ConfigError(f"level {l} cannot use a BaseMCMC spec")
        if s.kind == "mh":
            if not model.is_path_space:
                raise ConfigError("Metropolis-Hastings levels need a path-space model")
            d = model.path_dims[l]
            if s.proposal.shape != (model.size(l - 1), d):
                raise ConfigError(f"MH proposal at level {l} must have shape {(model.size(l - 1), d)}")
            if np.any(s.proposal < 0) or not np.allclose(s.proposal.sum(axis=1), 1.0, atol=1e-10):
                raise ConfigError(f"MH proposal at level {l} is not row-stochastic")
            if np.any((_r_matrix(model, l) > 0) & (s.proposal <= 0)):
                raise AbsoluteContinuityError(f"proposal at level {l} misses states charged by R_{l}")
    if specs[0].kernel is not None:
        K = np.asarray(specs[0].kernel, dtype=float)
        if K.shape != (model.size(0),) * 2:
            raise ConfigError("level-0 kernel must be square on S^(0)")
    return specs


# single draws


def direct_phi_draw(eta: OccupationMeasure, model: FeynmanKacModel, k: int, rng: np.random.Generator):
    """Select a visited state of level ``k - 1`` with probability proportional to ``G_{k-1}``, then move by ``L_k``."""
    if eta.total == 0:
        raise DesyncError("empty occupation measure")
    if not eta.space.same_as(model.spaces[k - 1]):
        raise SpaceMismatchError(f"occupation measure does not live on S^({k - 1})")
    w = eta.counts * model.G(k - 1)
    if not w.sum() > 0:
        raise DegeneratePotentialError(f"eta(G_{k - 1}) = 0")
    q = rng.choice(len(w), p=w / w.sum())
    y = rng.choice(model.size(k), p=model.L(k)[q])
    return model.spaces[k].points[y]


def mh_ratio(model: FeynmanKacModel, l: int, proposal: np.ndarray, x: int, y: int) -> float:
    """``r_l(x, y) = K(u, v) R(w, z) / (R(u, v) K(w, z))`` for path indices ``x = (u, v)``, ``y = (w, z)``."""
    d = model.path_dims[l]
    R = _r_matrix(model, l)
    u, v = divmod(x, d)
    w, z = divmod(y, d)
    num = proposal[u, v] * R[w, z]
    den = R[u, v] * proposal[w, z]
    if den == 0:
        if num == 0:
            return math.nan
        raise AbsoluteContinuityError(f"r_{l} has zero denominator at x={x}, y={y}")
    return float(num / den)


def mh_step(x: int, mu, model: FeynmanKacModel, l: int, proposal: np.ndarray, rng: np.random.Generator) -> int:
    """One Metropolis-Hastings move targeting ``Phi_l(mu)`` with proposal ``mu (x) K_l``."""
    mu = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
    d = model.path_dims[l]
    w = rng.choice(len(mu), p=mu / mu.sum())
    z = rng.choice(d, p=proposal[w])
    y = int(w * d + z)
    if y == x:
        return x
    r = mh_ratio(model, l, proposal, x, y)
    return y if rng.random() < min(1.0, r) else x


def mh_transition_matrix(model: FeynmanKacModel, l: int, proposal: np.ndarray, mu) -> np.ndarray:
    """Exact transition matrix of :func:`mh_step` for a frozen ``mu`` on ``S^(l-1)``."""
    mu = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
    mu = mu / mu.sum()
    d = model.path_dims[l]
    R = _r_matrix(model, l).ravel()
    K = np.asarray(proposal, dtype=float)
    q = (mu[:, None] * K).ravel()  # proposal law of (w, z), independent of x
    Kx = K.ravel()
    n = len(q)
    num = Kx[:, None] * R[None, :]
    den = R[:, None] * Kx[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    bad = (den == 0) & (num > 0) & (q[None, :] > 0)
    if np.any(bad):
        x, y = np.argwhere(bad)[0]
        raise AbsoluteContinuityError(f"r_{l} has zero denominator at x={x}, y={y}")
    M = q[None, :] * np.minimum(1.0, r)
    M[np.arange(n), np.arange(n)] = 0.0
    M[np.arange(n), np.arange(n)] = 1.0 - M.sum(axis=1)
    return M


def mh_dobrushin_bound(model: FeynmanKacModel, l: int, proposal: np.ndarray, mu=None) -> float:
    """``1 - 1/C_l`` where ``Phi_l(mu) <= C_l (mu (x) K_l)`` for every ``mu``.

    The density of ``Phi_l(mu)`` with respect to ``mu (x) K_l`` at ``(w, z)``
    is ``R_l(w, z) / (mu(G_{l-1}) K_l(w, z))``, so ``C_l = max R/K / min G``
    works uniformly.  Passing ``mu`` gives the sharper ``max R/K / mu(G)``
    over the support of ``mu``.
    """
    R = _r_matrix(model, l)
    K = np.asarray(proposal, dtype=float)
    if np.any((R > 0) & (K <= 0)):
        raise AbsoluteContinuityError(f"proposal at level {l} misses states charged by R_{l}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(R > 0, R / np.where(K > 0, K, 1.0), 0.0)
    if mu is None:
        C = ratio.max() / model.G(l - 1).min()
    else:
        mu = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
        mu = mu / mu.sum()
        C = ratio[mu > 0].max() / float(mu @ model.G(l - 1))
    return float(max(0.0, 1.0 - 1.0 / C))


def level_kernel(model: FeynmanKacModel, spec, l: int, mu=None) -> np.ndarray:
    """Exact transition matrix of level ``l`` for a frozen driving measure ``mu`` on ``S^(l-1)``."""
    if l == 0:
        return np.asarray(spec.kernel if spec.kernel is not None else model.M0(), dtype=float)
    mu = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
    if spec.kind == "mh":
        M = mh_transition_matrix(model, l, spec.proposal, mu)
        return np.linalg.matrix_power(M, spec.steps)
    row = phi_weights(mu / mu.sum(), model, l - 1)
    return np.tile(row, (model.size(l), 1))


def product_kernel(model: FeynmanKacModel, specs: Sequence, etas: Sequence, guard: int = ENUMERATION_GUARD) -> np.ndarray:
    """Matrix of the ``E_m`` kernel for frozen per-level measures ``etas[k]`` on ``S^(k)``."""
    size = float(np.prod([model.size(k) for k in range(model.m + 1)], dtype=float))
    if size**2 > guard:
        raise TooLargeError(f"product kernel with {int(size)}^2 entries exceeds guard {guard}")
    mats = [level_kernel(model, specs[0], 0)]
    mats += [level_kernel(model, specs[l], l, etas[l - 1]) for l in range(1, model.m + 1)]
    return reduce(np.kron, mats)


def omega_of(model: FeynmanKacModel, etas: Sequence) -> np.ndarray:
    """``pi^(0) (x) Phi_1(eta^(0)) (x) ... (x) Phi_m(eta^(m-1))`` as a flat vector over ``E_m``."""
    parts = [model.initial.weights]
    for l in range(1, model.m + 1):
        e = etas[l - 1]
        e = e.weights if isinstance(e, DiscreteMeasure) else np.asarray(e, dtype=float)
        parts.append(phi_weights(e / e.sum(), model, l - 1))
    return reduce(np.kron, parts)


# particle baseline


@dataclass
class ParticleRun:
    """Unweighted particle clouds per level for ``R`` independent replicates."""

    model: FeynmanKacModel
    N: int
    particles: list  # per level (R, N) state indices
    normalizer_log: np.ndarray  # (R, m + 1)

    def empirical(self, l: int) -> np.ndarray:
        """``(R, |S^(l)|)`` empirical measures."""
        R = self.particles[l].shape[0]
        counts = np.zeros((R, self.model.size(l)))
        np.add.at(counts, (np.repeat(np.arange(R), self.N), self.particles[l].ravel()), 1.0)
        return counts / self.N


def smc_run(model: FeynmanKacModel, N: int, seed: int, replicates: int = 1, replicate_ids=None) -> ParticleRun:
    """Multinomial selection by ``G_{l-1}`` then mutation by ``L_l``, level by level."""
    if N < 1:
        raise InvalidParameterError("N must be >= 1")
    ids = np.arange(replicates) if replicate_ids is None else np.asarray(replicate_ids)
    m = model.m
    U = np.stack([stream(seed, SMC_STREAM, r).random((m + 1, 2, N)) for r in ids])  # (R, m+1, 2, N)
    R = len(ids)
    x = categorical_many(np.broadcast_to(model.initial.weights, (R, model.size(0))), U[:, 0, 0])
    clouds = [x]
    logz = np.zeros((R, m + 1))
    for l in range(1, m + 1):
        g = model.G(l - 1)[x]
        mean = g.mean(axis=1)
        if np.any(~(mean > 0)):
            raise DegeneratePotentialError(f"all-zero potential over the level-{l - 1} cloud")
        logz[:, l] = logz[:, l - 1] + np.log(mean)
        anc_idx = categorical_many(g, U[:, l, 0])
        anc = np.take_along_axis(x, anc_idx, axis=1)
        x = categorical_rows(model.L(l)[anc], U[:, l, 1])
        clouds.append(x)
    return ParticleRun(model, N, clouds, logz)


def blend_weights(n: int, N: int) -> tuple[float, float]:
    """Weights of ``(eta_n, pi_N)`` in ``((n + 1) eta_n + N pi_N) / (N + n + 1)``."""
    tot = N + n + 1
    return (n + 1) / tot, N / tot


# the i-MCMC engine


class IMcmcRun:
    """Batched multi-level self-interacting chain.

    Parameters
    ----------
    model : FeynmanKacModel
    specs : sequence, optional
        One spec per level; defaults to ``BaseMCMC`` then ``DirectPhi``.
    replicates : int
        Number of independent replicates simulated together.
    seed : int
    replicate_ids : array, optional
        Explicit replicate ids (stream keys); overrides ``replicates``.
    init : sequence of arrays, optional
        Initial laws ``nu_k`` per level (uniform by default).
    track_joint : bool
        Also count visits of ``(X^(0), ..., X^(m))`` on ``E_m``.
    keep_history : bool
        Keep every visited state (memory grows with the horizon).
    """

    def __init__(self, model: FeynmanKacModel, specs: Sequence | None = None, replicates: int = 1, seed: int = 0,
                 replicate_ids=None, init: Sequence | None = None, track_joint: bool = False,
                 keep_history: bool = False, guard: int = ENUMERATION_GUARD):
        self.model = model
        self.specs = validate_specs(model, default_specs(model) if specs is None else specs)
        self.seed = int(seed)
        self.ids = np.arange(replicates) if replicate_ids is None else np.asarray(replicate_ids, dtype=np.int64)
        self.R = len(self.ids)
        m = model.m
        self.sizes = [model.size(k) for k in range(m + 1)]
        self.M0 = np.asarray(self.specs[0].kernel if self.specs[0].kernel is not None else model.M0(), dtype=float)
        widths = [1] + [2 if s.kind == "direct" else 3 * s.steps for s in self.specs[1:]]
        self._u = [UniformBlocks(self.seed, k, self.ids, max(widths[k], 1)) for k in range(m + 1)]
        if init is None:
            self.init = [np.full(s, 1.0 / s) for s in self.sizes]
        else:
            if len(init) != m + 1:
                raise ConfigError("need one initial law per level")
            self.init = [np.asarray(w, dtype=float) / np.sum(w) for w in init]
        self.blend = None
        self.blend_N = 0
        self.tick = 0
        self.states = np.zeros((self.R, m + 1), dtype=np.int64)
        for k in range(m + 1):
            u = self._u[k].next()[:, 0]
            self.states[:, k] = categorical(np.broadcast_to(self.init[k], (self.R, self.sizes[k])), u)
        self.counts = [np.zeros((self.R, s), dtype=np.int64) for s in self.sizes]
        self._push()
        self.history = [self.states.copy()] if keep_history else None
        self.joint_counts = None
        if track_joint:
            size = int(np.prod(self.sizes, dtype=float))
            if size > guard:
                raise TooLargeError(f"joint space of {size} points exceeds guard {guard}")
            self.strides = np.cumprod([1] + self.sizes[::-1][:-1])[::-1].astype(np.int64)
            self.joint_counts = np.zeros((self.R, size), dtype=np.int64)
            self._push_joint()

    @property
    def m(self) -> int:
        return self.model.m

    def _push(self):
        rows = np.arange(self.R)
        for k in range(self.m + 1):
            self.counts[k][rows, self.states[:, k]] += 1

    def _push_joint(self):
        idx = self.states @ self.strides
        self.joint_counts[np.arange(self.R), idx] += 1

    def read(self, k: int) -> np.ndarray:
        """Unnormalized driving weights for level ``k + 1``: counts, plus particle counts when blended."""
        w = self.counts[k].astype(float)
        if self.blend is not None:
            w = w + self.blend[k]
        return w

    def occupation(self, k: int, replicate: int = 0) -> OccupationMeasure:
        return OccupationMeasure(self.model.spaces[k], self.counts[k][replicate], keep_history=False)

    def occupation_weights(self, k: int) -> np.ndarray:
        return self.counts[k] / (self.tick + 1)

    def step(self) -> "IMcmcRun":
        """Advance every level one tick from the tick-``n`` snapshots, then push."""
        model = self.model
        reads = [self.read(k) for k in range(self.m)]
        new = np.empty_like(self.states)
        rows = np.arange(self.R)
        for k in range(self.m + 1):
            u = self._u[k].next()
            if k == 0:
                new[:, 0] = categorical(self.M0[self.states[:, 0]], u[:, 0])
                continue
            spec = self.specs[k]
            drive = reads[k - 1]
            if spec.kind == "direct":
                g = drive * model.G(k - 1)[None, :]
                if np.any(~(g.sum(axis=1) > 0)):
                    raise DegeneratePotentialError(f"eta(G_{k - 1}) = 0")
                anc = categorical(g, u[:, 0])
                new[:, k] = categorical(model.L(k)[anc], u[:, 1])
            else:
                new[:, k] = self._mh_moves(k, spec, drive, self.states[:, k], u)
        self.states = new
        self._push()
        if self.joint_counts is not None:
            self._push_joint()
        if self.history is not None:
            self.history.append(self.states.copy())
        self.tick += 1
        return self

    def _mh_moves(self, l: int, spec, drive: np.ndarray, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        model = self.model
        d = model.path_dims[l]
        R = _r_matrix(model, l)
        K = spec.proposal
        for s in range(spec.steps):
            w = categorical(drive, u[:, 3 * s])
            z = categorical(K[w], u[:, 3 * s + 1])
            cu, cv = np.divmod(x, d)
            num = K[cu, cv] * R[w, z]
            den = R[cu, cv] * K[w, z]
            if np.any((den == 0) & (num > 0)):
                raise AbsoluteContinuityError(f"r_{l} has zero denominator at the current state")
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
            accept = u[:, 3 * s + 2] < np.minimum(1.0, r)
            x = np.where(accept, w * d + z, x)
        return x

    def run_to(self, n: int) -> "IMcmcRun":
        while self.tick < n:
            self.step()
        return self

    # checkpoints

    def to_checkpoint(self) -> dict:
        return {
            "tick": self.tick,
            "seed": self.seed,
            "replicate_ids": self.ids.tolist(),
            "states": self.states.tolist(),
            "counts": [c.tolist() for c in self.counts],
            "normalizer_log": estimate_normalizers(self).tolist(),
        }

    def dump_checkpoint(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh)

    @classmethod
    def from_checkpoint(cls, model: FeynmanKacModel, data: dict, specs: Sequence | None = None) -> "IMcmcRun":
        """Rebuild a run and fast-forward its random streams to the stored tick."""
        run = cls(model, specs, seed=data["seed"], replicate_ids=data["replicate_ids"])
        for u in run._u:
            for _ in range(data["tick"]):
                u.next()
        run.tick = int(data["tick"])
        run.states = np.array(data["states"], dtype=np.int64)
        run.counts = [np.array(c, dtype=np.int64) for c in data["counts"]]
        return run


def estimate_normalizers(run: IMcmcRun) -> np.ndarray:
    """``log gamma_hat^(l)(1) = sum_{k<l} log eta_n^(k)(G_k)`` per replicate, shape ``(R, m + 1)``."""
    out = np.zeros((run.R, run.m + 1))
    for l in range(1, run.m + 1):
        mean = run.occupation_weights(l - 1) @ run.model.G(l - 1)
        if np.any(~(mean > 0)):
            raise DegeneratePotentialError(f"eta(G_{l - 1}) = 0")
        out[:, l] = out[:, l - 1] + np.log(mean)
    return out


def hybrid_init(run: IMcmcRun, particles: ParticleRun | None, mode: str = "init-only") -> IMcmcRun:
    """Seed a fresh run from particle approximations.

    ``"init-only"`` redraws every ``X_0^(k)`` from ``pi_N^(k)``;
    ``"blended"`` makes every occupation read use
    ``((n + 1) eta_n + N pi_N) / (N + n + 1)``.
    """
    if mode not in ("init-only", "blended"):
        raise ConfigError(f"unknown hybrid mode {mode!r}")
    if particles is None or particles.N == 0:
        return run
    if particles.model is not run.model:
        raise ConfigError("particle run was built for a different model")
    if particles.particles[0].shape[0] not in (1, run.R):
        raise ConfigError("particle replicate count must be 1 or match the run")
    if run.tick != 0:
        raise ConfigError("hybrid initialization must happen at tick 0")
    emp = [np.broadcast_to(particles.empirical(k), (run.R, run.sizes[k])) for k in range(run.m + 1)]
    if mode == "init-only":
        for k in range(run.m + 1):
            u = np.array([stream(run.seed, HYBRID_STREAM, k, r).random() for r in run.ids])
            x = categorical(emp[k], u)
            run.counts[k][np.arange(run.R), run.states[:, k]] -= 1
            run.states[:, k] = x
            run.counts[k][np.arange(run.R), x] += 1
        if run.joint_counts is not None:
            run.joint_counts[:] = 0
            run._push_joint()
        if run.history is not None:
            run.history = [run.states.copy()]
    else:
        run.blend = [particles.N * e for e in emp]
        run.blend_N = particles.N
    return run


# replicated experiments


@dataclass
class SimulationResult:
    levels: DiagnosticsSeries
    joint: Optional[DiagnosticsSeries]
    normalizers: DiagnosticsSeries  # errors of log gamma_hat^(l)(1)
    flow: ExactFlow

    def combined(self) -> DiagnosticsSeries:
        """Per-level and path-space errors in one long-format series."""
        if self.joint is None:
            return self.levels
        s = self.levels
        j = self.joint
        return DiagnosticsSeries(s.checkpoints, list(s.levels) + ["path"], list(s.functions) + list(j.functions),
                                 list(s.errors) + list(j.errors), s.replicate_ids, dict(s.metadata))


def level_basis(model: FeynmanKacModel, basis_seed: int = 20100701) -> list:
    return [default_functions(model.size(k), basis_seed, k) for k in range(model.m + 1)]


def joint_basis(model: FeynmanKacModel, cap: int = JOINT_FUNCTION_CAP) -> tuple[np.ndarray, list]:
    """Product-of-indicator functions on ``E_m`` (the first ``cap`` joint states)."""
    size = int(np.prod([model.size(k) for k in range(model.m + 1)], dtype=float))
    keep = min(size, cap)
    F = np.eye(size)[:, :keep]
    return F, [f"prod{i}" for i in range(keep)]


def _simulate_chunk(model, specs, n_max, seed, ids, checkpoints, track_joint, basis_seed, init):
    flow = solve_flow(model)
    run = IMcmcRun(model, specs, seed=seed, replicate_ids=ids, init=init, track_joint=track_joint)
    bases = level_basis(model, basis_seed)
    truth = [flow.targets[k].weights @ bases[k][0] for k in range(model.m + 1)]
    C = len(checkpoints)
    errs = [np.zeros((C, run.R, bases[k][0].shape[1])) for k in range(model.m + 1)]
    nerr = np.zeros((C, run.R, model.m + 1))
    jerr = None
    if track_joint:
        from .exact_oracle import exact_path_target

        JF, jnames = joint_basis(model)
        jtruth = exact_path_target(model, flow=flow).weights @ JF
        jerr = np.zeros((C, run.R, JF.shape[1]))
    for c, n in enumerate(checkpoints):
        run.run_to(int(n))
        for k in range(model.m + 1):
            errs[k][c] = run.occupation_weights(k) @ bases[k][0] - truth[k]
        nerr[c] = estimate_normalizers(run) - flow.log_gamma1[None, :]
        if track_joint:
            jerr[c] = run.joint_counts / (run.tick + 1) @ JF - jtruth
    return errs, nerr, jerr


def simulate(model: FeynmanKacModel, specs: Sequence | None = None, n_max: int = 2**14, replicates: int = 100,
             seed: int = 0, checkpoints=None, track_joint: bool = False, workers: int = 1,
             basis_seed: int = 20100701, init=None, replicate_ids=None) -> SimulationResult:
    """Replicated i-MCMC run scored against the exact flow at dyadic checkpoints."""
    specs = validate_specs(model, default_specs(model) if specs is None else specs)
    checkpoints = np.array(sorted(c for c in (DEFAULT_CHECKPOINTS if checkpoints is None else checkpoints)
                                  if c <= n_max), dtype=np.int64)
    ids = np.arange(replicates) if replicate_ids is None else np.asarray(replicate_ids, dtype=np.int64)
    workers = max(1, min(int(workers), len(ids)))
    args = (model, specs, n_max, seed)
    tail = (checkpoints, track_joint, basis_seed, init)
    if workers == 1:
        chunks = [_simulate_chunk(*args, ids, *tail)]
    else:
        splits = np.array_split(ids, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_simulate_chunk, *args, part, *tail) for part in splits]
            chunks = [f.result() for f in futs]
    errs = [np.concatenate([ch[0][k] for ch in chunks], axis=1) for k in range(model.m + 1)]
    nerr = np.concatenate([ch[1] for ch in chunks], axis=1)
    bases = level_basis(model, basis_seed)
    meta = {"model": model.name, "specs": [s.kind for s in specs], "seed": seed, "target": "pi",
            "function_osc": [np.ptp(b[0], axis=0).tolist() for b in bases]}
    levels = DiagnosticsSeries(checkpoints, list(range(model.m + 1)), [b[1] for b in bases], errs, ids, meta)
    norm = DiagnosticsSeries(checkpoints, ["log_gamma"], [[f"level{l}" for l in range(model.m + 1)]], [nerr], ids,
                             dict(meta, target="log_gamma1"))
    joint = None
    if track_joint:
        jerr = np.concatenate([ch[2] for ch in chunks], axis=1)
        joint = DiagnosticsSeries(checkpoints, ["path"], [joint_basis(model)[1]], [jerr], ids,
                                  dict(meta, space="E_m", target="pi_bar"))
    return SimulationResult(levels, joint, norm, solve_flow(model))


def available_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
