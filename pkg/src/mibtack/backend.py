"""Kernel backend selection.

Two modules implement the same numeric kernel interface:

* :mod:`mibtack._kernels_numba` -- loop-fused kernels compiled with numba.
* :mod:`mibtack._kernels_numpy` -- vectorised plain-numpy fallback.

The active backend is chosen once, lazily, from the MIBTACK_BACKEND
environment variable: "numba", "numpy", or unset (numba when importable,
numpy otherwise).  Tests and the benchmark script can force a choice at
runtime with :func:`set_backend`.

Both backends are deterministic in isolation.  They may disagree in the
last couple of floating-point bits (different summation orders), which is
why report files record which backend produced them.
"""

import os

ENV_VAR = "MIBTACK_BACKEND"

_ACTIVE = None  # (name, module) once resolved


def _load(name):
    if name == "numpy":
        from . import _kernels_numpy
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown kernel backend {name!r} (expected 'numba' or 'numpy')")


def _resolve():
    env = os.environ.get(ENV_VAR, "").strip().lower()
    if env in ("numba", "numpy"):
        return env, _load(env)
    if env:
        raise ValueError(f"{ENV_VAR}={env!r} not understood (expected 'numba' or 'numpy')")
    try:
        return "numba", _load("numba")
    except ImportError:
        return "numpy", _load("numpy")


def kernels():
    """Return the active kernel module."""
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = _resolve()
    return _ACTIVE[1]


def backend_name():
    """Name of the active backend ("numba" or "numpy")."""
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = _resolve()
    return _ACTIVE[0]


def set_backend(name):
    """Force a backend for the rest of the process (tests, benchmarks)."""
    global _ACTIVE
    if name is None:
        _ACTIVE = None
        return
    _ACTIVE = (name, _load(name))
