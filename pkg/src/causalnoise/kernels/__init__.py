"""Hot loops for enumeration, forward sampling and counterfactual propagation.

Two interchangeable implementations exist: vectorised numpy (always available) and
numba-compiled loops. ``CAUSALNOISE_KERNELS`` selects between them:

* ``auto`` (default): numba for inputs above a size threshold, numpy below it, numpy
  everywhere if numba cannot be imported;
* ``numba``: always numba;
* ``numpy``: never import numba.

Both paths perform the same floating-point operations in the same order, so results are
bit-identical whichever is selected.
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

from . import _numpy

ENV_VAR = "CAUSALNOISE_KERNELS"

# work sizes (rows x nodes) below which JIT dispatch costs more than it saves
_THRESHOLDS = {"world_weights": 1 << 15, "forward_sample": 1 << 16, "twin_step": 1 << 12}


def mode() -> str:
    value = os.environ.get(ENV_VAR, "auto").strip().lower()
    if value not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be auto, numba or numpy, got {value!r}")
    return value


@lru_cache(maxsize=1)
def _numba_module():
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


def numba_available() -> bool:
    return _numba_module() is not None


def _impl(name: str, work: int):
    m = mode()
    if m == "numpy":
        return getattr(_numpy, name)
    nb = _numba_module()
    if nb is None:
        if m == "numba":
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return getattr(_numpy, name)
    if m == "numba" or work >= _THRESHOLDS[name]:
        return getattr(nb, name)
    return getattr(_numpy, name)


def world_weights(c, worlds: np.ndarray, flat: np.ndarray | None = None) -> np.ndarray:
    """Joint probability of every row of ``worlds`` under compiled model ``c``."""
    fn = _impl("world_weights", worlds.shape[0] * c.n)
    return fn(c.topo, c.cards, c.par, c.npar, c.strides, c.offsets,
              c.flat if flat is None else flat, worlds)


def forward_sample(c, uniforms: np.ndarray) -> np.ndarray:
    fn = _impl("forward_sample", uniforms.shape[0] * c.n)
    return fn(c.topo, c.cards, c.par, c.npar, c.strides, c.offsets, c.cdf, uniforms)


def twin_step(c, fact, cf, w, node, resp, cw, allowed, do_value, drop, radix):
    fn = _impl("twin_step", fact.shape[0] * cw.shape[0])
    return fn(fact, cf, w, node, c.cards, c.par, c.npar, c.strides, resp, cw,
              allowed, do_value, drop, radix)


@lru_cache(maxsize=64)
def all_worlds(cards: tuple[int, ...]) -> np.ndarray:
    """Every joint assignment, node 0 most significant, last node varying fastest."""
    grids = np.indices(cards, dtype=np.int64).reshape(len(cards), -1).T
    grids.setflags(write=False)
    return grids
