"""Backend selection for the compiled kernels.

Numba is used when importable unless ``DSO_OPL_DISABLE_NUMBA`` is set to a
truthy value; the pure-numpy path is always available.
"""
import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator


def _env_disabled() -> bool:
    return os.environ.get("DSO_OPL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


_BACKEND = "numba" if HAVE_NUMBA and not _env_disabled() else "numpy"


def njit(*args, **kwargs):
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    """Switch between ``"numba"`` and ``"numpy"`` at runtime."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _BACKEND = name


def use_numba() -> bool:
    return _BACKEND == "numba"
