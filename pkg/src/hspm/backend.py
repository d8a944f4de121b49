"""Kernel backend selection: compiled Cython if importable, NumPy otherwise.

Set HSPM_FORCE_PY=1 to force the NumPy fallback (used by the benchmark and
the backend-parity tests).
"""

import os

if os.environ.get("HSPM_FORCE_PY", "").strip() not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as kernels


def backend_name() -> str:
    return kernels.BACKEND


def get_backend(name: str):
    """Explicit backend lookup ('cython' or 'numpy'); used by benchmarks."""
    if name == "numpy":
        from . import _kernels_py
        return _kernels_py
    if name == "cython":
        from . import _kernels  # raises ImportError when not built
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
