import numpy as np


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``(n_out, n_in)`` matrix for 1-D linear resampling.

    Uses the align-corners-false mapping ``src = (dst + 0.5) * n_in / n_out - 0.5``
    with the source coordinate clamped to ``[0, n_in - 1]``.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("extents must be >= 1")
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, max(n_in - 2, 0))
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    if n_in == 1:
        m[:, 0] = 1.0
    else:
        m[rows, lo] += 1.0 - frac
        m[rows, lo + 1] += frac
    return m.astype(dtype)
