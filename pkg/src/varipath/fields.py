"""Random positive fields: exponentials of smoothed white noise."""

from __future__ import annotations

import math

import numpy as np

from .grid import Grid

SMOOTHING_PASSES = 5
LOW, HIGH = 0.1, 10.0


def smoothed_noise(rng: np.random.Generator, shape: tuple[int, ...],
                   passes: int = SMOOTHING_PASSES) -> np.ndarray:
    z = rng.standard_normal(shape)
    for _ in range(passes):
        for ax in range(z.ndim):
            zp = np.concatenate([np.take(z, [0], axis=ax), z, np.take(z, [-1], axis=ax)], axis=ax)
            n = z.shape[ax]
            z = (0.25 * np.take(zp, range(0, n), axis=ax) + 0.5 * np.take(zp, range(1, n + 1), axis=ax)
                 + 0.25 * np.take(zp, range(2, n + 2), axis=ax))
    return z


def positive_field(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Field with values in [0.1, 10]: exp of noise rescaled to [-ln 10, ln 10]."""
    z = smoothed_noise(rng, shape)
    m = float(np.max(np.abs(z)))
    if m > 0:
        z = z / m
    return np.clip(np.exp(z * math.log(HIGH)), LOW, HIGH)


def envelope(grid: Grid) -> np.ndarray:
    """Positive profile vanishing on a dirichlet-zero boundary."""
    if not grid.domain.dirichlet:
        return np.ones(grid.shape)
    if grid.kind == "radial":
        r = grid.x
        return np.exp(-0.5 * r * r) * (1.0 - (r / r[-1]) ** 2)
    if grid.kind == "interval":
        a, b = grid.domain.bounds
        return np.sin(np.pi * (grid.x - a) / (b - a))
    ax, bx, ay, by = grid.domain.bounds
    X, Y = grid.mesh
    return np.sin(np.pi * (X - ax) / (bx - ax)) * np.sin(np.pi * (Y - ay) / (by - ay))
