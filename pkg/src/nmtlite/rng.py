"""Deterministic, splittable random number generation.

Every random draw in the toolkit flows through an RngState so that a run is
fully reproducible from the config seed alone.  States are derived by *path*
(e.g. ``root.child("dropout", update_no)``), which makes resumption trivial:
the consumer only has to remember integers, never raw generator state.
"""

from __future__ import annotations

import numpy as np

_TAGS = {"init": 0, "dropout": 1, "noise": 2, "data": 3, "decode": 4, "user": 5}


def _as_key(part) -> int:
    if isinstance(part, str):
        if part not in _TAGS:
            raise ValueError("unknown rng tag %r (known: %s)" % (part, sorted(_TAGS)))
        return _TAGS[part]
    return int(part)


class RngState:
    """Counter-based generator (Philox) addressed by seed + derivation path.

    Identical (seed, path) and draw sequence give bit-identical results.
    ``child`` yields an independent stream; parents and children never share
    state, so distinct streams are safe to use from different threads.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = _path
        ss = np.random.SeedSequence(self.seed, spawn_key=_path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *path) -> "RngState":
        return RngState(self.seed, self.path + tuple(_as_key(p) for p in path))

    # -- draws ------------------------------------------------------------

    def uniform(self, low, high, shape, dtype=np.float64):
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def normal(self, mean, std, shape, dtype=np.float64):
        return self._gen.normal(mean, std, size=shape).astype(dtype, copy=False)

    def bernoulli(self, p_keep, shape):
        # float 0/1 mask
        return (self._gen.random(size=shape) < p_keep).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def state_dict(self) -> dict:
        return {"seed": self.seed, "path": list(self.path)}

    @classmethod
    def from_state_dict(cls, d: dict) -> "RngState":
        return cls(d["seed"], tuple(d["path"]))

    def __repr__(self):
        return "RngState(seed=%d, path=%s)" % (self.seed, list(self.path))
