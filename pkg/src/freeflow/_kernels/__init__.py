"""Batch kernels with a compiled fast path and a numpy fallback.

The compiled extension (``freeflow._kernels._core``) is optional: it is
built when Cython and a C compiler are around, and skipped otherwise.
Both implementations follow the same arithmetic expression order, so
results are bit-identical and everything downstream can stay agnostic.

Set ``FREEFLOW_BACKEND=python`` or ``FREEFLOW_BACKEND=compiled`` to pin
one implementation; the default prefers the compiled one when present.
"""

import os

import numpy as np

from freeflow._kernels import fallback


class ModelArrays:
    """Flat, kernel-friendly view of a freeway model.

    Demand tables for all cells are concatenated: cell ``i`` owns
    breakpoints ``zs[boff[i]:boff[i+1]]`` (with matching ``fs``) and
    segment slopes ``ms[soff[i]:soff[i+1]]``.
    """

    __slots__ = ("n", "a", "c", "q", "p", "boff", "zs", "fs", "soff", "ms")

    def __init__(self, a, c, q, p, tables):
        self.n = len(a)
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        self.c = np.ascontiguousarray(c, dtype=np.float64)
        self.q = np.ascontiguousarray(q, dtype=np.float64)
        self.p = np.ascontiguousarray(p, dtype=np.float64)
        boff = [0]
        soff = [0]
        zs = []
        fs = []
        ms = []
        for cell_zs, cell_fs, cell_ms in tables:
            zs.extend(cell_zs)
            fs.extend(cell_fs)
            ms.extend(cell_ms)
            boff.append(len(zs))
            soff.append(len(ms))
        self.boff = np.asarray(boff, dtype=np.intp)
        self.soff = np.asarray(soff, dtype=np.intp)
        self.zs = np.asarray(zs, dtype=np.float64)
        self.fs = np.asarray(fs, dtype=np.float64)
        self.ms = np.asarray(ms, dtype=np.float64)


def _load_backend():
    choice = os.environ.get("FREEFLOW_BACKEND", "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            from freeflow._kernels import _core

            return _core
        except ImportError:
            return fallback
    if choice == "python":
        return fallback
    if choice == "compiled":
        from freeflow._kernels import _core

        return _core
    raise ValueError(
        f"FREEFLOW_BACKEND must be 'auto', 'python' or 'compiled', got {choice!r}"
    )


_impl = _load_backend()

demand_batch = _impl.demand_batch
step_batch = _impl.step_batch
xi_batch = _impl.xi_batch
value_batch = _impl.value_batch


def backend():
    """Name of the implementation in use: ``python`` or ``compiled``."""
    return _impl.BACKEND_NAME


def implementations():
    """All importable kernel implementations, keyed by backend name."""
    impls = {fallback.BACKEND_NAME: fallback}
    try:
        from freeflow._kernels import _core

        impls[_core.BACKEND_NAME] = _core
    except ImportError:
        pass
    return impls
