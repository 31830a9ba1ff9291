"""Catalog of scalar functions used as nonlinearities and path generators.

Every entry exposes ``value``, ``d1``, ``d2`` and, where it makes sense,
``d3``, ``antideriv`` (primitive vanishing at 0) and ``inverse``.  Functions
that act on signed arguments use the odd extension ``sign(t) g(|t|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline

from . import dual

__all__ = ["ScalarFn", "ScalarFnError", "CATALOG"]


class ScalarFnError(ValueError):
    pass


# kind -> (required parameters, description)
CATALOG: dict[str, tuple[tuple[str, ...], str]] = {
    "allen_cahn": (("k", "p", "q"), "k|t|^(p-2)t - |t|^(q-2)t"),
    "area_plus": ((), "sqrt(1+z^2), the Euclidean area density"),
    "constant": (("c",), "c"),
    "curvature_h_minus_truncated": (("theta",), "1/sqrt(1-t) for t<=1-theta, 1/sqrt(theta) beyond"),
    "curvature_h_plus": ((), "1/sqrt(1+t)"),
    "f_squared": ((), "f(t)^2 with f the Schrodinger dual transform"),
    "power": (("r",), "sign(t)|t|^r"),
    "tabulated": (("knots",), "cubic spline through [[t, value], ...]"),
}


def _sgn_pow(t, r):
    t = np.asarray(t, dtype=float)
    return np.sign(t) * np.abs(t) ** r


@dataclass(frozen=True, eq=False)
class ScalarFn:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    domain: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self) -> None:
        if self.kind not in CATALOG:
            raise ScalarFnError(f"unknown scalar function kind {self.kind!r}")
        need = CATALOG[self.kind][0]
        missing = [k for k in need if k not in self.params]
        extra = [k for k in self.params if k not in need]
        if missing or extra:
            raise ScalarFnError(f"{self.kind}: expected parameters {need}, got {tuple(self.params)}")
        p = self.params
        if self.kind == "power" and not p["r"] > 0:
            raise ScalarFnError("power exponent r must be positive")
        if self.kind == "curvature_h_minus_truncated" and not 0 < p["theta"] < 1:
            raise ScalarFnError("theta must lie in (0,1)")
        if self.kind == "tabulated":
            kn = np.asarray(p["knots"], dtype=float)
            if kn.ndim != 2 or kn.shape[1] != 2 or kn.shape[0] < 4 or np.any(np.diff(kn[:, 0]) <= 0):
                raise ScalarFnError("tabulated knots must be >= 4 increasing [t, value] pairs")
            spline = CubicSpline(kn[:, 0], kn[:, 1], bc_type="not-a-knot")
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "domain", (float(kn[0, 0]), float(kn[-1, 0])))
        self._self_check()

    # -- convenience constructors ----------------------------------------
    @classmethod
    def power(cls, r: float) -> ScalarFn:
        return cls("power", {"r": float(r)})

    @classmethod
    def constant(cls, c: float) -> ScalarFn:
        return cls("constant", {"c": float(c)})

    @classmethod
    def allen_cahn(cls, k: float, p: float, q: float) -> ScalarFn:
        return cls("allen_cahn", {"k": float(k), "p": float(p), "q": float(q)})

    @classmethod
    def tabulated(cls, knots) -> ScalarFn:
        return cls("tabulated", {"knots": [[float(a), float(b)] for a, b in knots]})

    @classmethod
    def from_dict(cls, d: dict) -> ScalarFn:
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise ScalarFnError("scalar function needs a 'kind'")
        if kind == "power" and "q" in d and "r" not in d:
            # nonlinearity convention g(t) = |t|^{q-2} t
            d["r"] = float(d.pop("q")) - 1.0
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    # -- evaluation ------------------------------------------------------
    def value(self, t):
        t = np.asarray(t, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            return _sgn_pow(t, p["r"])
        if k == "constant":
            return np.full_like(t, p["c"])
        if k == "allen_cahn":
            return p["k"] * _sgn_pow(t, p["p"] - 1) - _sgn_pow(t, p["q"] - 1)
        if k == "curvature_h_plus":
            return 1.0 / np.sqrt(1.0 + t)
        if k == "curvature_h_minus_truncated":
            th = p["theta"]
            tt = np.minimum(t, 1.0 - th)
            return 1.0 / np.sqrt(1.0 - tt)
        if k == "area_plus":
            return np.sqrt(1.0 + t * t)
        if k == "f_squared":
            f = dual.f(t)
            return f * f
        return self._spline(t)

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            r = p["r"]
            with np.errstate(divide="ignore"):
                return r * np.abs(t) ** (r - 1)
        if k == "constant":
            return np.zeros_like(t)
        if k == "allen_cahn":
            return p["k"] * (p["p"] - 1) * np.abs(t) ** (p["p"] - 2) - (p["q"] - 1) * np.abs(t) ** (p["q"] - 2)
        if k == "curvature_h_plus":
            return -0.5 * (1.0 + t) ** -1.5
        if k == "curvature_h_minus_truncated":
            th = p["theta"]
            return np.where(t <= 1.0 - th, 0.5 * (1.0 - np.minimum(t, 1 - th)) ** -1.5, 0.0)
        if k == "area_plus":
            return t / np.sqrt(1.0 + t * t)
        if k == "f_squared":
            f = dual.f(t)
            return 2.0 * f * dual.f_prime(t)
        return self._spline(t, 1)

    def d2(self, t):
        t = np.asarray(t, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            r = p["r"]
            with np.errstate(divide="ignore", invalid="ignore"):
                return r * (r - 1) * np.sign(t) * np.abs(t) ** (r - 2)
        if k == "constant":
            return np.zeros_like(t)
        if k == "allen_cahn":
            return (p["k"] * (p["p"] - 1) * (p["p"] - 2) * _sgn_pow(t, p["p"] - 3)
                    - (p["q"] - 1) * (p["q"] - 2) * _sgn_pow(t, p["q"] - 3))
        if k == "curvature_h_plus":
            return 0.75 * (1.0 + t) ** -2.5
        if k == "curvature_h_minus_truncated":
            th = p["theta"]
            return np.where(t <= 1.0 - th, 0.75 * (1.0 - np.minimum(t, 1 - th)) ** -2.5, 0.0)
        if k == "area_plus":
            return (1.0 + t * t) ** -1.5
        if k == "f_squared":
            fp = dual.f_prime(t)
            return 2.0 * fp ** 4
        return self._spline(t, 2)

    def d3(self, t):
        t = np.asarray(t, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            r = p["r"]
            with np.errstate(divide="ignore"):
                return r * (r - 1) * (r - 2) * np.abs(t) ** (r - 3)
        if k == "f_squared":
            fp = dual.f_prime(t)
            return -16.0 * dual.f(t) * fp ** 7
        if k == "area_plus":
            return -3.0 * t * (1.0 + t * t) ** -2.5
        if k == "tabulated":
            return self._spline(t, 3)
        h = 1e-4 * np.maximum(1.0, np.abs(t))
        return (self.d2(t + h) - self.d2(t - h)) / (2 * h)

    def antideriv(self, t):
        """Primitive F with F(0) = 0 (even for odd-extended entries)."""
        t = np.asarray(t, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            r = p["r"]
            return np.abs(t) ** (r + 1) / (r + 1)
        if k == "constant":
            return p["c"] * t
        if k == "allen_cahn":
            return p["k"] * np.abs(t) ** p["p"] / p["p"] - np.abs(t) ** p["q"] / p["q"]
        if k == "curvature_h_plus":
            return 2.0 * (np.sqrt(1.0 + t) - 1.0)
        if k == "curvature_h_minus_truncated":
            th = p["theta"]
            t0 = 1.0 - th
            inside = 2.0 * (1.0 - np.sqrt(1.0 - np.minimum(t, t0)))
            return np.where(t <= t0, inside, inside + (t - t0) / math.sqrt(th))
        if k == "tabulated":
            return self._spline.antiderivative()(t) - self._spline.antiderivative()(0.0)
        raise ScalarFnError(f"{k} has no primitive in this catalog")

    def inverse(self, y):
        """Inverse on the nonnegative branch (generators Q and densities M)."""
        y = np.asarray(y, dtype=float)
        k, p = self.kind, self.params
        if k == "power":
            return np.abs(y) ** (1.0 / p["r"])
        if k == "f_squared":
            return dual.f_inv(np.sqrt(np.maximum(y, 0.0)))
        if k == "area_plus":
            return np.sqrt(np.maximum(y * y - 1.0, 0.0))
        raise ScalarFnError(f"{k} is not used as an invertible generator")

    # -- self check ------------------------------------------------------
    def _sample_points(self) -> np.ndarray:
        k = self.kind
        if k == "tabulated":
            a, b = self.domain
            return np.linspace(a, b, 9)[1:-1]
        if k == "curvature_h_minus_truncated":
            return np.array([0.05, 0.2, 0.4, 0.6 * (1 - self.params["theta"])])
        return np.array([0.3, 0.7, 1.3, 2.1])

    def _self_check(self) -> None:
        t = self._sample_points()
        h = 1e-5
        pairs = [(self.value, self.d1), (self.d1, self.d2)]
        for f, df in pairs:
            fd = (f(t + h) - f(t - h)) / (2 * h)
            ex = df(t)
            err = np.abs(fd - ex) / np.maximum(1.0, np.abs(ex))
            if np.any(err > 1e-6):
                raise ScalarFnError(f"{self.kind}: derivative self-check failed ({err.max():.2e})")
