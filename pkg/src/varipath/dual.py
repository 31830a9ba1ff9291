"""The change of variables u = f(v) with f' = 1/sqrt(1 + 2 f^2), f(0) = 0.

The inverse has a closed form, so f itself is obtained by Newton's method on
f_inv.  f_inv is convex and increasing on [0, inf) and
min(t, 2^{1/4} sqrt(t)) is an upper bound for f(t), so Newton started there
decreases monotonically to the root.  A bisection step guards against any
overshoot.
"""

from __future__ import annotations

import numpy as np

__all__ = ["f", "f_inv", "f_prime", "f_inv_prime", "DualTransform"]

_SQ2 = np.sqrt(2.0)
_TOL = 4 * np.finfo(float).eps


def f_inv(y):
    y = np.asarray(y, dtype=float)
    return 0.5 * y * np.sqrt(1.0 + 2.0 * y * y) + np.arcsinh(_SQ2 * y) / (2.0 * _SQ2)


def f_inv_prime(y):
    y = np.asarray(y, dtype=float)
    return np.sqrt(1.0 + 2.0 * y * y)


def f(t):
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    hi = np.minimum(a, 2.0 ** 0.25 * np.sqrt(a))
    lo = np.zeros_like(a)
    y = hi.copy()
    for _ in range(60):
        r = f_inv(y) - a
        if np.all(np.abs(r) <= _TOL * (1.0 + a)):
            break
        hi = np.where(r > 0, y, hi)
        lo = np.where(r <= 0, y, lo)
        step = y - r / f_inv_prime(y)
        bad = (step <= lo) | (step >= hi)
        y = np.where(bad, 0.5 * (lo + hi), step)
    # one more Newton step settles the last ulp
    y = y - (f_inv(y) - a) / f_inv_prime(y)
    out = np.sign(t) * y
    return out if out.ndim else float(out)


def f_prime(t):
    ft = f(t)
    return 1.0 / np.sqrt(1.0 + 2.0 * np.asarray(ft) ** 2)


class DualTransform:
    """Namespace object bundling f, f', f^{-1}."""

    f = staticmethod(f)
    f_prime = staticmethod(f_prime)
    f_inv = staticmethod(f_inv)
