"""NumPy implementations of the hot kernels.

These are the reference semantics for :mod:`slt._kernels`; the compiled
versions must agree with them (exactly for the integer kernels, to roundoff
for the floating-point ones).
"""

import numpy as np


def cn_update(zeta, nl, xi, a, b):
    """``a*zeta + b*(nl + xi)`` per mode; ``xi`` may be None."""
    rhs = nl if xi is None else nl + xi
    return a * zeta + b * rhs


def advect(u, v, zx, zy):
    """Physical-space advection term ``-(u*zx + v*zy)``."""
    return -(u * zx + v * zy)


def crps_terms(truth, ens):
    """Per-component CRPS pieces for ``ens`` of shape ``(m, n)``.

    Returns ``(mae, variation)`` with ``variation = sum_ij |x_i - x_j| / (2 m^2)``.
    The pairwise sum uses the sorted-order identity
    ``sum_ij |x_i - x_j| = 2 sum_i (2i - m + 1) x_(i)``.
    """
    ens = np.asarray(ens, dtype=float)
    truth = np.asarray(truth, dtype=float)
    m = ens.shape[0]
    mae = np.mean(np.abs(ens - truth[None]), axis=0)
    srt = np.sort(ens, axis=0)
    w = (2.0 * np.arange(m) - m + 1.0)[:, None]
    pair = 2.0 * np.sum(w * srt, axis=0)
    return mae, pair / (2.0 * m * m)


def jet_mask(U):
    """Strict periodic local maxima with ``U > 0`` along the last axis."""
    U = np.asarray(U, dtype=float)
    left = np.roll(U, 1, axis=-1)
    right = np.roll(U, -1, axis=-1)
    return (U > left) & (U > right) & (U > 0.0)


def first_change(counts, direction, persistence):
    """Index of the first debounced count change in ``direction`` per row.

    A change at ``t`` is confirmed when ``counts[t:t+persistence]`` all equal
    the new value; the running state then moves to it.  Rows without a
    confirmed change in the requested direction get -1.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim == 1:
        counts = counts[None]
    out = np.full(counts.shape[0], -1, dtype=np.int64)
    n_t = counts.shape[1]
    for r in range(counts.shape[0]):
        row = counts[r]
        if n_t == 0:
            continue
        state = row[0]
        for t in range(1, n_t - persistence + 1):
            c = row[t]
            if c == state or np.any(row[t : t + persistence] != c):
                continue
            if (c - state) * direction > 0:
                out[r] = t
                break
            state = c
    return out
