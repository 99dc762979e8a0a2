"""Hot loops: batched network evaluation, RK4 rollouts and their gradients.

Two interchangeable backends expose the same functions:

* ``_numba``: per-sample loops compiled with ``numba.njit`` (default).
* ``_numpy``: batch-vectorized numpy, used when numba is missing or when
  ``BINODE_DISABLE_NUMBA=1`` is set in the environment.

Both take the packed arrays produced by :meth:`binode.model.BinodeModel.pack`.
"""
import os

from . import _numpy as numpy_backend

try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

ACT_CODES = {"identity": 0, "relu": 1, "elu": 2, "softplus": 3}
FIXED_CODES = {"none": 0, "linear": 1, "ultradian": 2}


def _numba_requested():
    return os.environ.get("BINODE_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes", "on")


def get_backend(name=None):
    """Return a backend module by name ('numba' or 'numpy'), or the default."""
    if name is None:
        name = "numba" if (_numba_requested() and numba_backend is not None) else "numpy"
    if name == "numba":
        if numba_backend is None:
            raise RuntimeError("numba backend unavailable")
        return numba_backend
    if name == "numpy":
        return numpy_backend
    raise ValueError(f"unknown backend {name!r}")


def backend_name():
    return "numba" if get_backend() is numba_backend else "numpy"
