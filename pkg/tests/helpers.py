"""Shared oracles for the test suite.

The gradient oracle is central finite differences on float64; it knows
nothing about the autodiff tape, it just re-runs a forward closure with
entries of an array nudged in place.
"""

import numpy as np

from newsrec import autodiff as ad


def fd_grad(forward, x, h=1e-5):
    """Central-difference gradient of scalar forward() w.r.t. array x.

    forward must recompute from x's current contents; x is restored."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = forward()
        flat[i] = old - h
        fm = forward()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic, numeric):
    """max |g_a - g_fd| / max(1, |g_fd|), the gradient check metric."""
    if analytic is None:
        analytic = np.zeros_like(numeric)
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0


def sample_safe(make, run, margin=1e-3, tries=200):
    """Resample inputs until the forward pass stays clear of ReLU kinks,
    pooling ties, and gate thresholds, so finite differences are valid."""
    for _ in range(tries):
        xs = make()
        with ad.trace_margins() as ms:
            run(xs)
        if not ms or min(ms) > margin:
            return xs
    raise AssertionError("could not sample inputs away from boundaries")
