"""Counter-based random streams keyed by ``(seed, level, replicate)``.

Each stream is a Philox generator, so a replicate's trajectory depends only
on its own key: running 10 or 500 replicates, in one process or several,
gives the same numbers for replicate ``r``.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


class UniformBlocks:
    """Per-tick uniforms of shape ``(R, width)`` drawn from ``R`` independent streams.

    Draws are buffered in blocks; a Philox stream is consumed in order, so
    the block size does not change the values seen by any replicate.
    """

    def __init__(self, seed: int, level: int, replicates, width: int, block: int = 1024):
        self.gens = [stream(seed, level, r) for r in replicates]
        self.width = width
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos >= self.block:
            self._buf = np.stack([g.random((self.block, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from each row of ``probs`` (``(R, S)``) with uniforms ``u`` (``(R,)``).

    Rows need not be normalized.  Zero-probability states are never returned.
    """
    cdf = np.cumsum(probs, axis=1)
    target = u * cdf[:, -1]
    idx = (cdf <= target[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def categorical_many(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Several inverse-CDF draws per row: ``probs`` ``(R, S)``, ``u`` ``(R, K)`` -> ``(R, K)``."""
    cdf = np.cumsum(probs, axis=-1)
    target = u * cdf[..., -1:]
    idx = (cdf[..., None, :] <= target[..., :, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def categorical_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One draw from each of ``rows`` ``(..., S)`` with uniforms ``u`` of shape ``(...)``."""
    cdf = np.cumsum(rows, axis=-1)
    target = u * cdf[..., -1]
    idx = (cdf <= target[..., None]).sum(axis=-1)
    return np.minimum(idx, rows.shape[-1] - 1)
