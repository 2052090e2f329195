"""Runtime switches for the numeric kernels.

``TMFUSE_NUMBA=0`` forces the pure-numpy kernels; any other value (or unset)
uses the numba versions when numba imports cleanly. ``TMFUSE_DTYPE=float32``
switches the default working precision.
"""

from __future__ import annotations

import os

import numpy as np

# numba probes TBB first and warns when the system copy is too old
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_state = {
    "numba": HAVE_NUMBA and os.environ.get("TMFUSE_NUMBA", "1").strip() not in ("0", "false", "no", "off"),
    "dtype": np.dtype(os.environ.get("TMFUSE_DTYPE", "float64")),
}

if _state["dtype"] not in (np.dtype(np.float64), np.dtype(np.float32)):
    raise ValueError(f"TMFUSE_DTYPE must be float64 or float32, got {_state['dtype']}")


def use_numba() -> bool:
    return _state["numba"]


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` kernels for subsequent calls."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _state["numba"] = name == "numba"


def backend_name() -> str:
    return "numba" if _state["numba"] else "numpy"


def default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype


def set_num_threads(n: int) -> None:
    """Cap the numba thread pool (no-op on the numpy path)."""
    if HAVE_NUMBA and n is not None and n > 0:
        import numba as nb

        nb.set_num_threads(min(int(n), nb.config.NUMBA_NUM_THREADS))
