"""Central finite differences for scalar functions of numpy arrays."""

import numpy as np


def numeric_grad(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(auto, num):
    """max |auto - num| / (|num| + 1e-8), the pointwise relative error."""
    auto, num = np.asarray(auto), np.asarray(num)
    return float(np.max(np.abs(auto - num) / (np.abs(num) + 1e-8)))


def rel_err_global(auto, num):
    """Error relative to the largest gradient entry; robust when entries are near zero."""
    auto, num = np.asarray(auto), np.asarray(num)
    return float(np.max(np.abs(auto - num)) / (np.max(np.abs(num)) + 1e-12))
