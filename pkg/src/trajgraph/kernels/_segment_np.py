"""Pure-numpy segment kernels (fallback backend).

`np.add.at` / `np.maximum.at` apply updates unbuffered, one index at a
time in ascending order, which matches the compiled backend bit for bit.
"""

import numpy as np

NAME = "python"


def add_rows_at(out, idx, rows):
    """out[idx[e]] += rows[e] for e in ascending order, in place."""
    np.add.at(out, idx, rows)


def max_rows_at(out, idx, rows):
    """out[idx[e]] = max(out[idx[e]], rows[e]), in place."""
    np.maximum.at(out, idx, rows)
