"""Hot scatter/gather kernels with backend selection.

The compiled Cython extension is preferred when importable; otherwise the
numpy fallback is used. Both produce bitwise-identical results. The active
backend can be switched explicitly (used by tests and benchmarks).
"""

import numpy as np

from . import _segment_np

try:
    from . import _segment_cy
except ImportError:  # extension not built
    _segment_cy = None

_BACKENDS = {"python": _segment_np}
if _segment_cy is not None:
    _BACKENDS["compiled"] = _segment_cy

_active = _BACKENDS.get("compiled", _segment_np)


def backend_name():
    return _active.NAME


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend ("python" or "compiled")."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active = _BACKENDS[name]


def add_rows_at(out, idx, rows):
    """In place: out[idx[e]] += rows[e], ascending e (deterministic order)."""
    if rows.shape[0]:
        _active.add_rows_at(out, idx, rows)


def max_rows_at(out, idx, rows):
    """In place: out[idx[e]] = max(out[idx[e]], rows[e]), ascending e."""
    if rows.shape[0]:
        _active.max_rows_at(out, idx, rows)


def segment_sum(rows, idx, n):
    """Sum rows into n groups; groups with no rows are zero."""
    out = np.zeros((n, rows.shape[1]), dtype=np.float64)
    add_rows_at(out, idx, rows)
    return out


def segment_max(rows, idx, n):
    """Per-group row-wise maximum; empty groups stay at -inf."""
    out = np.full((n, rows.shape[1]), -np.inf, dtype=np.float64)
    max_rows_at(out, idx, rows)
    return out
