"""Gaussian tail laws u(r) ~ C r^rho e^{-r^2/2} on radial solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction
from .reporting import write_csv

__all__ = ["DecayError", "DecayFit", "tail_fit", "envelope_check", "WINDOW_LEVELS",
           "MIN_WINDOW_NODES", "EDGE_FRACTION", "ENVELOPE_RATIO_MAX"]

WINDOW_LEVELS = (1e-12, 1e-3)   # band of u / max u
MIN_WINDOW_NODES = 20
EDGE_FRACTION = 0.9             # r1 <= EDGE_FRACTION * R
ENVELOPE_RATIO_MAX = 3.0


class DecayError(ValueError):
    def __init__(self, msg: str, suggested_R: float | None = None):
        super().__init__(msg if suggested_R is None else f"{msg}; try R >= {suggested_R:.3g}")
        self.suggested_R = suggested_R


@dataclass
class DecayFit:
    window: tuple[float, float]
    rho: float
    target: float
    log_C: float
    C1: float
    C2: float
    residual: float
    nodes: int
    r: np.ndarray
    u: np.ndarray

    @property
    def error(self) -> float:
        return abs(self.rho - self.target)

    @property
    def ratio(self) -> float:
        return self.C2 / self.C1

    def to_dict(self) -> dict:
        return {"window": list(self.window), "rho": self.rho, "target": self.target,
                "error": self.error, "log_C": self.log_C, "C1": self.C1, "C2": self.C2,
                "ratio": self.ratio, "residual": self.residual, "nodes": self.nodes}

    def write_csv(self, path: str) -> None:
        """Window samples: r, u, and the envelope quotient at the target exponent."""
        q = self.u * self.r ** (-self.target) * np.exp(0.5 * self.r ** 2)
        write_csv(path, ["r", "u", "envelope"], zip(self.r, self.u, q))


def _radial(u) -> tuple[Grid, np.ndarray]:
    if isinstance(u, GridFunction):
        grid, vals = u.grid, u.values
    else:
        grid, vals = u
    if grid.kind != "radial":
        raise DecayError("decay fits need a radial grid")
    return grid, np.asarray(vals, dtype=float)


def _window(grid: Grid, u: np.ndarray) -> np.ndarray:
    r = grid.x
    R = r[-1]
    top = float(np.max(u))
    lo, hi = WINDOW_LEVELS
    sel = (u >= lo * top) & (u <= hi * top) & (r > 0) & (r <= EDGE_FRACTION * R)
    # only the outer tail: drop anything inside the radius of the maximum
    sel &= r > r[int(np.argmax(u))]
    idx = np.flatnonzero(sel)
    if idx.size < MIN_WINDOW_NODES:
        # pure Gaussian reaches the lower level at sqrt(2 ln(1/lo)); leave the edge margin
        suggested = max(R * 1.25, math.sqrt(2 * math.log(1 / lo)) / EDGE_FRACTION)
        raise DecayError(f"decay window has {idx.size} < {MIN_WINDOW_NODES} nodes", suggested)
    return idx


def tail_fit(u, omega: float, N: int) -> DecayFit:
    """Least-squares fit of log u + r^2/2 = log C + rho log r on the tail window.

    ``u`` is a radial GridFunction (or a ``(grid, values)`` pair).  The
    reported target exponent is (omega - N) / 2.
    """
    grid, vals = _radial(u)
    idx = _window(grid, vals)
    r, uw = grid.x[idx], vals[idx]
    y = np.log(uw) + 0.5 * r * r
    A = np.column_stack([np.ones_like(r), np.log(r)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    target = 0.5 * (omega - N)
    q = uw * r ** (-target) * np.exp(0.5 * r * r)
    return DecayFit((float(r[0]), float(r[-1])), float(coef[1]), target, float(coef[0]),
                    float(q.min()), float(q.max()), resid, int(idx.size), r, uw)


def envelope_check(u, omega: float, N: int) -> tuple[float, float, float]:
    """(C1, C2, C2/C1) for C1 <= u r^{-(omega-N)/2} e^{r^2/2} <= C2 on the window."""
    fit = tail_fit(u, omega, N)
    return fit.C1, fit.C2, fit.ratio
