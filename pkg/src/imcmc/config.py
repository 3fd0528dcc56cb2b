"""Experiment configuration: TOML or JSON, validated before anything runs."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .diagnostics import DEFAULT_CHECKPOINTS
from .errors import ConfigError, InvalidKernelError
from .measures import DiscreteMeasure, StateSpace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SUITES = ("rates", "normalizers", "path", "concentration", "stability", "uniform", "smc")
DEFAULT_SUITES = ("rates", "normalizers", "stability")
MIN_FIT_POINTS = 5


@dataclass
class ExperimentConfig:
    seed: int
    model: dict
    kernels: list | str = "direct"
    n_max: int = 2**14
    replicates: int = 100
    checkpoints: list | None = None
    suites: tuple = DEFAULT_SUITES
    out: str = "imcmc-out"
    workers: int | None = None
    smc_particles: tuple = (10, 100)
    smc_replicates: int = 500
    name: str = "experiment"
    source: str | None = None
    extra: dict = field(default_factory=dict)


def bundled_configs() -> dict:
    root = resources.files("imcmc") / "configs"
    return {p.name[:-5]: p for p in root.iterdir() if p.name.endswith(".toml")}


def _read(path: str) -> tuple[dict, str]:
    p = Path(path)
    if not p.exists():
        bundled = bundled_configs()
        if path in bundled:
            return tomllib.loads(bundled[path].read_text(encoding="utf-8")), f"bundled:{path}"
        raise ConfigError(f"config {path!r} not found (bundled: {sorted(bundled)})")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() == ".json":
            return json.loads(text), str(p)
        return tomllib.loads(text), str(p)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _int(d: dict, key: str, default, lo: int = 0) -> int:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{key} must be an integer >= {lo}, got {v!r}")
    return v


def load_config(path: str, seed: int | None = None, out: str | None = None, workers: int | None = None) -> ExperimentConfig:
    """Read and validate a config; command-line overrides win over file values."""
    raw, source = _read(path)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    run = raw.get("run", {})
    diag = raw.get("diagnostics", {})
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("config must set a seed")
        seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    model = raw.get("model")
    if not isinstance(model, dict) or not model:
        raise ConfigError("config needs a [model] table")
    suites = tuple(diag.get("suites", DEFAULT_SUITES))
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown diagnostic suites {sorted(unknown)}; known: {list(SUITES)}")
    checkpoints = run.get("checkpoints")
    if checkpoints is not None:
        if not all(isinstance(c, int) and c >= 0 for c in checkpoints):
            raise ConfigError("checkpoints must be non-negative integers")
        checkpoints = sorted(set(checkpoints))
    kernels = raw.get("kernels", "direct")
    if isinstance(kernels, str):
        if kernels not in ("direct", "mh"):
            raise ConfigError(f"kernels must be 'direct', 'mh' or a per-level list, got {kernels!r}")
    elif not (isinstance(kernels, list) and all(k in ("base", "direct", "mh") for k in kernels)):
        raise ConfigError("per-level kernels must be a list of 'base', 'direct' or 'mh'")
    cfg = ExperimentConfig(
        seed=seed,
        model=model,
        kernels=kernels,
        n_max=_int(run, "n_max", 2**14, 1),
        replicates=_int(run, "replicates", 100, 2),
        checkpoints=checkpoints,
        suites=suites,
        out=out or raw.get("output", {}).get("dir", "imcmc-out"),
        workers=workers if workers is not None else run.get("workers"),
        smc_particles=tuple(diag.get("smc_particles", (10, 100))),
        smc_replicates=_int(diag, "smc_replicates", 500, 2),
        name=raw.get("name", Path(source).stem if not source.startswith("bundled:") else source[8:]),
        source=source,
        extra={k: v for k, v in raw.items() if k not in ("seed", "model", "kernels", "run", "diagnostics", "output", "name")},
    )
    if cfg.workers is not None and (not isinstance(cfg.workers, int) or cfg.workers < 1):
        raise ConfigError("workers must be a positive integer")
    fitted = {"rates", "path", "uniform"} & set(cfg.suites)
    usable = [c for c in (checkpoints or DEFAULT_CHECKPOINTS) if c <= cfg.n_max]
    if fitted and len(usable) < MIN_FIT_POINTS:
        raise ConfigError(f"suites {sorted(fitted)} fit rates on >= {MIN_FIT_POINTS} checkpoints; "
                          f"n_max = {cfg.n_max} leaves {len(usable)}")
    return cfg


def build_model(spec: dict):
    """Bundled model by name, or an inline finite model.

    Inline models give ``initial`` (weights on ``S^(0)``), ``potentials``
    (``G_0 .. G_{m-1}``) and ``transitions`` (``L_1 .. L_m`` as nested lists).
    Invalid kernels raise :class:`InvalidKernelError`; everything else wrong
    raises :class:`ConfigError`.
    """
    from .models import BUNDLED, fk3, fk3_path, load_bundled

    if "name" in spec:
        name = spec["name"]
        if name not in BUNDLED:
            raise ConfigError(f"unknown bundled model {name!r}; known: {sorted(BUNDLED)}")
        levels = spec.get("levels")
        if levels is not None:
            if not isinstance(levels, int) or levels < 1:
                raise ConfigError("levels must be a positive integer")
            if name == "fk3":
                return fk3(levels)
            if name == "fk3-path":
                return fk3_path(levels)
            if name == "bilaplace-continuous":
                from .continuous import bilaplace

                return bilaplace(levels)
            raise ConfigError(f"model {name!r} has a fixed number of levels")
        return load_bundled(name)
    from .kernels import FeynmanKacModel

    try:
        initial = np.asarray(spec["initial"], dtype=float)
        pots = [np.asarray(g, dtype=float) for g in spec["potentials"]]
        trans = [np.asarray(L, dtype=float) for L in spec["transitions"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"inline model needs initial, potentials and transitions: {exc}") from exc
    sizes = [len(initial)] + [L.shape[1] if L.ndim == 2 else -1 for L in trans]
    if any(s < 1 for s in sizes):
        raise ConfigError("transitions must be matrices")
    spaces = [StateSpace.range(l, s) for l, s in enumerate(sizes)]
    if abs(initial.sum() - 1) > 1e-9 or np.any(initial < 0):
        raise ConfigError("initial must be a probability vector")
    try:
        return FeynmanKacModel(spaces, DiscreteMeasure(spaces[0], initial / initial.sum()), pots, trans,
                               name=spec.get("label", "inline"))
    except InvalidKernelError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
