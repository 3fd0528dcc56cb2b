"""Empirical verdicts from replicated runs.

A :class:`DiagnosticsSeries` holds signed errors ``eta_n(f) - target(f)``
indexed by (checkpoint, level, replicate, test function).  The functions
below reduce it to L_r error curves, log-log rate fits, trend tests,
exceedance tails with explicit concentration overlays, and uniform-in-level
profiles.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from .errors import DependencyError, InvalidDataError, InvalidParameterError
from .kernels import FeynmanKacModel, RegularityConstants, beta_p, contraction_bound

DEFAULT_CHECKPOINTS = tuple(2**j for j in range(6, 15))


@dataclass
class DiagnosticsSeries:
    """Replicated signed errors.

    ``errors[i]`` has shape ``(C, R, F_i)`` for ``levels[i]``: checkpoints by
    replicates by that level's test functions.
    """

    checkpoints: np.ndarray
    levels: list
    functions: list
    errors: list
    replicate_ids: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.checkpoints = np.asarray(self.checkpoints, dtype=np.int64)
        self.replicate_ids = np.asarray(self.replicate_ids, dtype=np.int64)
        for e, names in zip(self.errors, self.functions):
            if e.shape != (len(self.checkpoints), len(self.replicate_ids), len(names)):
                raise InvalidDataError("error array does not match checkpoints/replicates/functions")
            if not np.all(np.isfinite(e)):
                raise InvalidDataError("errors must be finite")

    @property
    def n_replicates(self) -> int:
        return len(self.replicate_ids)

    def level_errors(self, level) -> np.ndarray:
        return self.errors[self.levels.index(level)]

    def rows(self) -> Iterator[tuple]:
        """Long format rows ``(n, level, replicate, function, error)``."""
        for c, n in enumerate(self.checkpoints):
            for i, level in enumerate(self.levels):
                e = self.errors[i]
                for r, rid in enumerate(self.replicate_ids):
                    for j, name in enumerate(self.functions[i]):
                        yield int(n), level, int(rid), name, float(e[c, r, j])

    def to_csv(self, fh=None) -> str | None:
        """Write RFC 4180 CSV with a header row; returns the text when ``fh`` is None."""
        out = io.StringIO(newline="") if fh is None else fh
        w = csv.writer(out, lineterminator="\r\n")
        w.writerow(["n", "level", "replicate", "function", "error"])
        for n, level, rid, name, err in self.rows():
            w.writerow([n, level, rid, name, repr(err)])
        return out.getvalue() if fh is None else None

    @staticmethod
    def concat(parts: Sequence["DiagnosticsSeries"]) -> "DiagnosticsSeries":
        """Stack series that differ only in their replicates."""
        first = parts[0]
        for p in parts[1:]:
            if not (np.array_equal(p.checkpoints, first.checkpoints) and p.levels == first.levels):
                raise InvalidDataError("series disagree on checkpoints or levels")
        errors = [np.concatenate([p.errors[i] for p in parts], axis=1) for i in range(len(first.levels))]
        ids = np.concatenate([p.replicate_ids for p in parts])
        order = np.argsort(ids, kind="stable")
        return DiagnosticsSeries(first.checkpoints, list(first.levels), first.functions,
                                 [e[:, order, :] for e in errors], ids[order], dict(first.metadata))


@dataclass
class ErrorCurve:
    checkpoints: np.ndarray
    levels: list
    functions: list
    values: list  # per level, shape (C, F_l)
    r: float

    def level_curve(self, level, how: str = "rms") -> np.ndarray:
        """Collapse a level's functions into one curve (root mean power or max)."""
        v = self.values[self.levels.index(level)]
        if how == "max":
            return v.max(axis=1)
        return np.mean(v**self.r, axis=1) ** (1.0 / self.r)


def lr_error_curve(series: DiagnosticsSeries, r: float = 2.0) -> ErrorCurve:
    """``E(|err|^r)^(1/r)`` across replicates, per level, function and checkpoint."""
    if r < 1:
        raise InvalidParameterError("r must be >= 1")
    if series.n_replicates < 2:
        raise InvalidParameterError("need at least 2 replicates")
    vals = [np.mean(np.abs(e) ** r, axis=1) ** (1.0 / r) for e in series.errors]
    return ErrorCurve(series.checkpoints, list(series.levels), series.functions, vals, r)


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_range: tuple

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual,
                "n_range": list(self.n_range)}


def rate_fit(n, values, min_points: int = 5) -> RateFit:
    """Least-squares slope of ``log values`` against ``log n``."""
    n = np.asarray(n, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(n) < min_points:
        raise InvalidDataError(f"need at least {min_points} checkpoints, got {len(n)}")
    if np.any(~(y > 0)):
        raise InvalidDataError("rate fits need positive curve values")
    X = np.log(n)
    Y = np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))),
                   (int(n.min()), int(n.max())))


def mann_kendall(values) -> tuple[float, float]:
    """Mann-Kendall test for an upward trend: ``(tau, one-sided p-value)``."""
    y = np.asarray(values, dtype=float)
    res = stats.kendalltau(np.arange(len(y)), y, alternative="greater")
    return float(res.statistic), float(res.pvalue)


# explicit concentration thresholds


def self_interacting_threshold(delta: float, n: int, n0: int, b: float, c: float) -> float:
    """Deviation level exceeded with probability at most ``delta`` for self-interacting chains."""
    return (2 * n0 / (1 - b)) ** 2 * math.sqrt(2 / (n + 1)) * (math.sqrt(math.log(2 / delta)) + 2 * (1 + c))


def flow_variation_threshold(delta: float, n: int, n0: int, b: float, c: float, eps_bar: float) -> float:
    """Deviation level for a general flow with mean variation ``eps_bar``."""
    a = n0 / (1 - b)
    return a * (math.sqrt(2 * math.log(2 / delta) / (n + 1)) + (1 + c) * 4 * a * max(eps_bar, 1 / (n + 1)))


def simc_mean_variation_bound(n: int) -> float:
    """Bound on the mean variation of an occupation-measure flow."""
    return 2 * math.log(n + 2) / (n + 1)


def self_interacting_tail(t, n: int, n0: int, b: float, c: float) -> np.ndarray:
    """Inverse of :func:`self_interacting_threshold`: bound on ``P(|err| > t)`` (capped at 1)."""
    scale = (2 * n0 / (1 - b)) ** 2 * math.sqrt(2 / (n + 1))
    s = np.maximum(np.asarray(t, dtype=float) / scale - 2 * (1 + c), 0.0)
    return np.minimum(1.0, 2 * np.exp(-(s**2)))


def flow_variation_tail(t, n: int, n0: int, b: float, c: float, eps_bar: float) -> np.ndarray:
    """Inverse of :func:`flow_variation_threshold`."""
    a = n0 / (1 - b)
    s = np.maximum(np.asarray(t, dtype=float) / a - (1 + c) * 4 * a * max(eps_bar, 1 / (n + 1)), 0.0)
    return np.minimum(1.0, 2 * np.exp(-(n + 1) * s**2 / 2))


@dataclass
class TailReport:
    checkpoints: np.ndarray
    t_grid: np.ndarray
    levels: list
    empirical: list  # per level (C, F_l, T)
    flow_variation_overlay: np.ndarray | None  # (C, T)
    self_interacting_overlay: np.ndarray | None  # (C, T)


def concentration_tail(series: DiagnosticsSeries, t_grid, constants: dict | None = None,
                       min_replicates: int = 100) -> TailReport:
    """Empirical ``P(|err| > t)`` per checkpoint, with explicit bound overlays.

    ``constants`` holds ``n0``, ``b``, ``c`` and optionally ``eps_bar`` (a
    callable ``n -> mean variation``; the occupation-measure bound is used
    by default).
    """
    if series.n_replicates < min_replicates:
        raise InvalidParameterError(f"tail estimates need >= {min_replicates} replicates")
    t = np.asarray(t_grid, dtype=float)
    emp = [np.mean(np.abs(e)[..., None] > t, axis=1) for e in series.errors]
    th = co = None
    if constants is not None:
        n0, b, c = constants["n0"], constants["b"], constants["c"]
        eps_bar = constants.get("eps_bar", simc_mean_variation_bound)
        th = np.array([flow_variation_tail(t, int(n), n0, b, c, eps_bar(int(n))) for n in series.checkpoints])
        co = np.array([self_interacting_tail(t, int(n), n0, b, c) for n in series.checkpoints])
    return TailReport(series.checkpoints, t, list(series.levels), emp, th, co)


# stability and uniform-in-level behaviour


@dataclass
class StabilityProfile:
    lambda1: float
    lambda2: float
    k0: int
    ks: np.ndarray
    sup_diff: np.ndarray  # sup_l 2 beta(P_{l+1, l+k}) per k
    betas: dict
    unstable: bool

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2 if math.isfinite(self.lambda2) else "inf",
            "k0": self.k0,
            "ks": self.ks.tolist(),
            "sup_diff": self.sup_diff.tolist(),
            "unstable": self.unstable,
        }


def stability_profile(model: FeynmanKacModel, l_range=None, k_range=None, zero_tol: float = 1e-14) -> StabilityProfile:
    """Fit ``sup_l ||Phi_bar^(l+k,l+1)(eta) - Phi_bar^(l+k,l+1)(mu)|| <= lambda1 exp(-lambda2 k)``.

    The left side is evaluated exactly as ``2 beta(P_{l+1,l+k})``.
    """
    m = model.m
    l_range = range(0, m) if l_range is None else l_range
    k_range = range(1, m + 1) if k_range is None else k_range
    betas = {}
    ks, sup = [], []
    for k in k_range:
        vals = [beta_p(model, l + 1, l + k) for l in l_range if l + k <= m and l + 1 >= 1]
        if not vals:
            continue
        for l in l_range:
            if l + k <= m:
                betas[(l, k)] = beta_p(model, l + 1, l + k)
        ks.append(k)
        sup.append(2 * max(vals))
    ks = np.array(ks)
    sup = np.array(sup)
    if len(ks) == 0:
        raise InvalidParameterError("no (l, k) pairs inside the model")
    positive = sup > zero_tol
    if np.all(~positive[ks >= 1]):
        return StabilityProfile(float(sup[0]) if len(sup) else 0.0, math.inf, int(ks[0]), ks, sup, betas, False)
    kp, yp = ks[positive], np.log(sup[positive])
    if len(kp) == 1:
        slope = 0.0 if sup[positive][0] >= 2 - 1e-12 else -math.inf
        intercept = yp[0]
    else:
        slope, intercept = np.polyfit(kp, yp, 1)
    lam2 = -float(slope)
    if not lam2 > 0 or np.all(sup >= 2 - 1e-12):
        return StabilityProfile(2.0, 0.0, int(ks[-1]), ks, sup, betas, True)
    fit = np.exp(intercept - lam2 * ks)
    rel = np.where(positive, np.abs(sup - fit) / np.maximum(sup, zero_tol), 0.0)
    k0 = int(ks[-1])
    for i in range(len(ks)):
        if np.all(rel[i:] < 0.1):
            k0 = int(ks[i])
            break
    lam1 = float(np.max(sup * np.exp(lam2 * ks)))
    return StabilityProfile(lam1, lam2, k0, ks, sup, betas, False)


@dataclass
class UniformProfile:
    checkpoints: np.ndarray
    profile: np.ndarray
    fit: RateFit
    alpha: float
    branch: str
    envelope_shape: np.ndarray
    envelope_constant: float
    ratio_trend_p: float
    note: str = "Lambda is a surrogate; this is a consistency check, not a sharp bound"

    @property
    def decay_exponent(self) -> float:
        return -self.fit.slope

    def to_dict(self) -> dict:
        return {
            "checkpoints": self.checkpoints.tolist(),
            "profile": self.profile.tolist(),
            "fit": self.fit.to_dict(),
            "alpha": self.alpha,
            "branch": self.branch,
            "envelope_constant": self.envelope_constant,
            "ratio_trend_p": self.ratio_trend_p,
            "note": self.note,
        }


def osc_normalized_curve(series: DiagnosticsSeries, r: float = 2.0) -> np.ndarray:
    """``(C, levels)`` L_r errors, max over functions, each function scaled to oscillation <= 1."""
    curve = lr_error_curve(series, r)
    scales = series.metadata.get("function_osc")
    out = []
    for i, level in enumerate(series.levels):
        v = curve.values[i]
        if scales is not None:
            v = v / np.maximum(np.asarray(scales[i], dtype=float), 1.0)[None, :]
        out.append(v.max(axis=1))
    return np.stack(out, axis=1)


def uniform_level_profile(series: DiagnosticsSeries, stability: StabilityProfile | None,
                          constants: RegularityConstants | None, r: float = 2.0,
                          min_levels: int = 8) -> UniformProfile:
    """Sup over levels of the L_r error, against the uniform-in-level envelope."""
    if stability is None or constants is None:
        raise DependencyError("uniform profile needs a stability profile and regularity constants")
    if len(series.levels) < min_levels:
        raise InvalidParameterError(f"need >= {min_levels} levels, got {len(series.levels)}")
    prof = osc_normalized_curve(series, r).max(axis=1)
    n = series.checkpoints.astype(float)
    fit = rate_fit(n, prof)
    lam1, lam2 = stability.lambda1, stability.lambda2
    B, A = constants.B, constants.A
    if not math.isfinite(lam2):
        lam2_eff = 50.0
    else:
        lam2_eff = max(lam2, 1e-12)
    if B <= 1:
        alpha = 1.0
        branch = "B=1"
        shape = (A * (1 + np.log(n + 1) / (2 * lam2_eff)) + lam1 * math.exp(lam2_eff)) / np.sqrt(n + 1)
    else:
        alpha = lam2_eff / (lam2_eff + math.log(B))
        branch = "B>1"
        shape = (A * B / (B - 1) + lam1) * math.exp(lam2_eff) / (n + 1) ** (alpha / 2)
    ratio = prof / shape
    _, p = mann_kendall(ratio)
    return UniformProfile(series.checkpoints, prof, fit, float(alpha), branch, shape, float(ratio.max()), p)


def path_space_error(series: DiagnosticsSeries, r: float = 2.0) -> ErrorCurve:
    """L_r curve of the joint occupation measure over ``E_m`` (product test functions)."""
    if series.metadata.get("space") != "E_m":
        raise InvalidParameterError("series does not hold path-space errors")
    return lr_error_curve(series, r)


def bound_envelope_ok(model: FeynmanKacModel, profile: StabilityProfile, m_window: int = 1) -> bool:
    """Every exact ``beta(P_{l+1,l+k})`` lies under the mixing-constant bound."""
    for (l, k), b in profile.betas.items():
        if b > contraction_bound(model, l + 1, l + k, m_window) + 1e-12:
            return False
    return True
