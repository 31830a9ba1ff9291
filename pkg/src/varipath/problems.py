"""Discretized energy functionals and their gradients.

A :class:`ProblemSpec` names a family and its parameters; the matching
:class:`Family` object (built lazily, cached on the spec) evaluates the
energy, its nodal gradient, a positive definite preconditioner for descent,
and constraint data for the mass-constrained modes.

Raw gradients are derivatives with respect to nodal values and therefore
carry quadrature weights.  :func:`euler_lagrange` divides them out to give
the strong-form residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from . import dual
from .grid import Grid, GridError, GridFunction, _poisson_array, fractional_matrix
from .scalarfn import ScalarFn

__all__ = [
    "FAMILIES",
    "ProblemSpec",
    "State",
    "RegimeError",
    "SpecError",
    "energy",
    "euler_lagrange",
    "residual_norm",
    "boundary_energy",
    "constraint_value",
    "euclid_cap",
]

EPS_REG = 1e-12


class SpecError(ValueError):
    """Invalid family parameters or a state that does not fit the spec."""


class RegimeError(ArithmeticError):
    """A state left the parameter regime where the family is defined."""


# family -> parameter schema (name: description); used by the CLI catalog
FAMILIES: dict[str, dict[str, str]] = {
    "allen_cahn": {"p": "real > 1", "q": "real > p", "k": "real"},
    "fractional": {"s": "real in (0,1)", "g": "ScalarFn"},
    "generalized_plap": {"p": "real > 1", "h": "ScalarFn", "g": "ScalarFn"},
    "gross_pitaevskii": {"k": "int >= 1", "B": "symmetric k x k", "mode": "fixed_omega | fixed_mass",
                         "omega": "list of k reals (fixed_omega)", "V": "ScalarFn or 'trap'"},
    "hamiltonian_dual": {"p": "real > 0", "q": "real > 0"},
    "mean_curvature_euclid": {"g": "ScalarFn", "p": "real in (1,2), default 1.5",
                              "grad_cap": "real, default ((2-p)/(p-1))^(1/2) - 1e-6"},
    "mean_curvature_minkowski": {"g": "ScalarFn", "theta": "real in (0,1)",
                                 "M": "truncation level for g, default diam/2"},
    "nonlinear_boundary": {"p": "real > 1", "q": "real > 1"},
    "p_eigenvalue": {"p": "real > 1", "Lambda": "real"},
    "schrodinger_dual": {"mode": "fixed_omega | fixed_mass", "omega": "real (fixed_omega)",
                         "V": "ScalarFn or 'trap'"},
    "tabulated": {"I": "ScalarFn (scalar energy of one real unknown)"},
}


def euclid_cap(p: float) -> float:
    return math.sqrt((2.0 - p) / (p - 1.0))


@dataclass(frozen=True, eq=False)
class State:
    components: tuple[GridFunction, ...]

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise SpecError("a state needs at least one component")
        g0 = comps[0].grid
        if any(c.grid is not g0 and c.grid != g0 for c in comps):
            raise SpecError("all components must share one grid")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, grid: Grid | None, arrays: Sequence[np.ndarray]) -> State:
        return cls(tuple(GridFunction(grid, a) for a in arrays))

    @property
    def grid(self) -> Grid | None:
        return self.components[0].grid

    @property
    def arrays(self) -> list[np.ndarray]:
        return [c.values for c in self.components]

    def __len__(self) -> int:
        return len(self.components)


def _fsum(a) -> float:
    return math.fsum(np.ravel(a))


def _potential(V, grid: Grid) -> np.ndarray:
    if isinstance(V, str):
        if V != "trap":
            raise SpecError(f"unknown potential {V!r}")
        if grid.ndim == 2:
            X, Y = grid.mesh
            return X * X + Y * Y
        return grid.x ** 2
    if grid.ndim == 2:
        X, Y = grid.mesh
        return V.value(np.sqrt(X * X + Y * Y))
    return V.value(np.abs(grid.x))


def _as_fn(v) -> ScalarFn:
    if isinstance(v, ScalarFn):
        return v
    if isinstance(v, dict):
        return ScalarFn.from_dict(v)
    raise SpecError(f"expected a scalar function, got {v!r}")


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

class Family:
    arity = 1
    constrained = False
    positive = True
    multiplier_name = ""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.grid = spec.grid
        self.params = spec.params

    # required
    def energy_terms(self, X: list[np.ndarray]) -> list[np.ndarray]:
        """Per-node (or per-cell) contributions whose sum is the energy."""
        raise NotImplementedError

    def energy(self, X: list[np.ndarray]) -> float:
        return _fsum(np.concatenate([np.ravel(t) for t in self.energy_terms(X)]))

    def flow_terms(self, X: list[np.ndarray]) -> list[np.ndarray]:
        return self.energy_terms(X)

    def flow_energy(self, X: list[np.ndarray]) -> tuple[float, float]:
        """Energy whose exact derivative is :meth:`grad`, with the sum of |terms|.

        The second value sets the roundoff scale of the first.
        """
        t = np.concatenate([np.ravel(a) for a in self.flow_terms(X)])
        return _fsum(t), _fsum(np.abs(t))

    def grad(self, X: list[np.ndarray]) -> list[np.ndarray]:
        raise NotImplementedError

    def precondition(self, X: list[np.ndarray], R: list[np.ndarray]) -> list[np.ndarray]:
        """Apply the inverse of a positive definite metric to raw gradients."""
        raise NotImplementedError

    def generator(self) -> list[dict]:
        """Designated path generator per component."""
        raise NotImplementedError

    # constrained modes
    def constraint(self, X) -> list[float]:
        return []

    def constraint_grad(self, X) -> list[np.ndarray]:
        return []

    def renormalize(self, X) -> list[np.ndarray]:
        return X

    def report_multipliers(self, X, mu: list[float]) -> list[float]:
        return list(mu)

    def check_regime(self, X) -> None:
        return None

    # helpers
    @property
    def w(self) -> np.ndarray:
        return self.grid.node_weights

    def free(self, a: np.ndarray) -> np.ndarray:
        return np.where(self.grid.free_mask, a, 0.0)

    def inv_weights(self) -> np.ndarray:
        w = self.grid.node_weights
        return np.where(self.grid.free_mask, 1.0 / np.where(w > 0, w, 1.0), 0.0)


def _coef(z2: np.ndarray, p: float, eps: float) -> np.ndarray:
    if p == 2.0:
        return np.ones_like(z2)
    return (z2 + eps) ** ((p - 2.0) / 2.0)


class GradientPower(Family):
    """(1/p) int H(|grad u|^p) - int G(u) + optional lower-order terms.

    Covers the generalized p-Laplacian, Allen-Cahn and both curvature
    operators (p = 2 with the curvature h functions).
    """

    def __init__(self, spec, p: float, h: ScalarFn | None, g: ScalarFn | None,
                 gen_exponent: float, grad_cap: float | None = None, g_cap: float | None = None):
        super().__init__(spec)
        self.p = float(p)
        self.h = None if h is None or (h.kind == "constant" and h.params["c"] == 1.0) else h
        self.g = g
        self.gen_exponent = gen_exponent
        self.grad_cap = grad_cap
        self.g_cap = g_cap
        self.ops = self.grid.ops

    # nonlinearity with optional truncation at level M (odd extension)
    def _g(self, u):
        if self.g is None:
            return np.zeros_like(u)
        if self.g_cap is None:
            return self.g.value(u)
        return np.sign(u) * self.g.value(np.minimum(np.abs(u), self.g_cap))

    def _dg(self, u):
        if self.g is None:
            return np.zeros_like(u)
        if self.g_cap is None:
            return self.g.d1(u)
        return np.where(np.abs(u) <= self.g_cap, self.g.d1(np.minimum(np.abs(u), self.g_cap)), 0.0)

    def _G(self, u):
        if self.g is None:
            return np.zeros_like(u)
        if self.g_cap is None:
            return self.g.antideriv(u)
        M = self.g_cap
        a = np.abs(u)
        return self.g.antideriv(np.minimum(a, M)) + float(self.g.value(M)) * np.maximum(a - M, 0.0)

    def check_regime(self, X) -> None:
        if self.grad_cap is None:
            return
        zmax = math.sqrt(float(np.max(self.ops.sq(X[0]))))
        if zmax > self.grad_cap:
            raise RegimeError(f"cell gradient {zmax:.6g} exceeds the cap {self.grad_cap:.6g}")

    def _grad_energy_terms(self, u, eps: float = 0.0):
        z2 = self.ops.sq(u)
        if eps:
            zp = (z2 + eps) ** (self.p / 2.0) - eps ** (self.p / 2.0)
        else:
            zp = z2 ** (self.p / 2.0)
        H = zp if self.h is None else self.h.antideriv(zp)
        return self.ops.cw * H / self.p

    def lower_energy(self, u) -> np.ndarray:
        return -self.w * self._G(u)

    def lower_grad(self, u) -> np.ndarray:
        return -self.w * self._g(u)

    def lower_curv(self, u) -> np.ndarray:
        """Nonnegative part of the lower-order Hessian diagonal (per unit weight)."""
        return np.maximum(-self._dg(u), 0.0)

    def energy_terms(self, X):
        self.check_regime(X)
        u = X[0]
        return [self._grad_energy_terms(u), self.lower_energy(u)]

    def flow_terms(self, X):
        if self.p == 2.0 or self.h is not None:
            return self.energy_terms(X)
        self.check_regime(X)
        u = X[0]
        return [self._grad_energy_terms(u, EPS_REG), self.lower_energy(u)]

    def _a(self, u, eps):
        z2 = self.ops.sq(u)
        a = _coef(z2, self.p, eps)
        if self.h is not None:
            a = a * self.h.value(z2 ** (self.p / 2.0))
        return a

    def grad(self, X):
        self.check_regime(X)
        u = X[0]
        g = self.ops.div(u, self._a(u, EPS_REG)) + self.lower_grad(u)
        return [self.free(g)]

    def precondition(self, X, R):
        u = X[0]
        z2 = self.ops.sq(u)
        # for p < 2 the secant coefficient of the regularized energy majorizes its Hessian
        delta2 = EPS_REG if self.p < 2 else max(1e-6 * float(np.max(z2)), EPS_REG)
        a = _coef(z2, self.p, delta2)
        if self.h is not None:
            a = a * self.h.value(z2 ** (self.p / 2.0))
            if self.h.kind == "curvature_h_minus_truncated" or self.h.kind == "curvature_h_plus":
                # include the derivative of the flux for the curvature operators
                a = a + 2.0 * z2 * np.maximum(self.h.d1(z2), 0.0)
        shift = self.w * (self.lower_curv(u) + self.shift_floor())
        return [self.ops.solve_free(a, shift, R[0])]

    def shift_floor(self) -> float:
        return 0.0

    def generator(self):
        return [{"generator": "power", "r": self.gen_exponent}]


class PEigen(GradientPower):
    constrained = True
    multiplier_name = "Lambda"

    def __init__(self, spec, p, Lam):
        super().__init__(spec, p, None, None, p)
        self.Lam = float(Lam)

    def lower_energy(self, u):
        return -self.Lam / self.p * self.w * np.abs(u) ** self.p

    def lower_grad(self, u):
        return -self.Lam * self.w * np.sign(u) * np.abs(u) ** (self.p - 1)

    def lower_curv(self, u):
        return np.zeros_like(u)

    def constraint(self, X):
        return [_fsum(self.w * np.abs(X[0]) ** self.p)]

    def constraint_grad(self, X):
        u = X[0]
        return [self.free(self.w * np.sign(u) * np.abs(u) ** (self.p - 1))]

    def renormalize(self, X):
        c = self.constraint(X)[0]
        return [X[0] / c ** (1.0 / self.p)]

    def report_multipliers(self, X, mu):
        # gradient of the full energy is (Lambda_p - Lambda) times the constraint gradient
        return [mu[0] + self.Lam]


class NonlinearBoundary(GradientPower):
    def __init__(self, spec, p, q):
        super().__init__(spec, p, None, None, p)
        self.q = float(q)

    def lower_energy(self, u):
        return (self.w * np.abs(u) ** self.p / self.p
                - self.grid.boundary_weights * np.abs(u) ** self.q / self.q)

    def lower_grad(self, u):
        return (self.w * np.sign(u) * np.abs(u) ** (self.p - 1)
                - self.grid.boundary_weights * np.sign(u) * np.abs(u) ** (self.q - 1))

    def lower_curv(self, u):
        if self.p == 2.0:
            return np.ones_like(u)
        a = np.abs(u)
        floor = 1e-3 * float(np.max(a)) + 1e-12
        return (self.p - 1) * np.maximum(a, floor) ** (self.p - 2)


class Fractional(Family):
    def __init__(self, spec, s, g):
        super().__init__(spec)
        self.s = float(s)
        self.g = g
        self.L = fractional_matrix(self.grid, self.s)
        self.fm = self.grid.free_mask

    def energy_terms(self, X):
        u = X[0]
        uf = u[self.fm]
        return [0.5 * (uf * (self.L @ uf)), -self.w * self.g.antideriv(u)]

    def grad(self, X):
        u = X[0]
        out = -self.w * self.g.value(u)
        out[self.fm] += self.L @ u[self.fm]
        return [self.free(out)]

    def precondition(self, X, R):
        u = X[0]
        shift = (self.w * np.maximum(-self.g.d1(u), 0.0))[self.fm]
        A = self.L + np.diag(shift)
        out = np.zeros_like(u)
        out[self.fm] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), R[0][self.fm])
        return [out]

    def generator(self):
        return [{"generator": "squared"}]


class HamiltonianDual(Family):
    arity = 2

    def __init__(self, spec, p, q):
        super().__init__(spec)
        self.p, self.q = float(p), float(q)
        self.a = (self.p + 1) / self.p
        self.b = (self.q + 1) / self.q

    def K(self, f):
        return _poisson_array(self.grid, f)

    def power_terms(self, f, g):
        return self.w * (np.abs(f) ** self.a / self.a + np.abs(g) ** self.b / self.b)

    def energy_terms(self, X):
        f, g = X
        return [self.power_terms(f, g), -self.w * f * self.K(g)]

    def grad(self, X):
        f, g = X
        gf = self.w * (np.sign(f) * np.abs(f) ** (1 / self.p) - self.K(g))
        gg = self.w * (np.sign(g) * np.abs(g) ** (1 / self.q) - self.K(f))
        return [self.free(gf), self.free(gg)]

    def precondition(self, X, R):
        out = []
        for x, r, e in zip(X, R, (self.p, self.q)):
            ax = np.abs(x)
            floor = 1e-2 * float(np.max(ax)) + 1e-12
            d = (1 / e) * np.maximum(ax, floor) ** (1 / e - 1)
            out.append(self.free(r / (self.w * d)))
        return out

    def reconstruct(self, X) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) = (K g, K f)."""
        f, g = X
        return self.K(g), self.K(f)

    def generator(self):
        return [{"generator": "power", "r": self.a}, {"generator": "power", "r": self.b}]


class SchrodingerDual(Family):
    multiplier_name = "omega"

    def __init__(self, spec, mode, omega, V):
        super().__init__(spec)
        self.mode = mode
        self.constrained = mode == "fixed_mass"
        self.omega = 0.0 if self.constrained else float(omega)
        self.V = _potential(V, self.grid)
        self.ops = self.grid.ops

    def energy_terms(self, X):
        v = X[0]
        F2 = dual.f(v) ** 2
        return [0.5 * self.ops.cw * self.ops.sq(v),
                self.w * (0.5 * (self.V - self.omega) * F2 + 0.25 * F2 * F2)]

    def grad(self, X):
        v = X[0]
        F = dual.f(v)
        Fp = 1.0 / np.sqrt(1.0 + 2.0 * F * F)
        g = self.ops.div(v, 1.0) + self.w * ((self.V - self.omega) * F * Fp + F ** 3 * Fp)
        return [self.free(g)]

    def precondition(self, X, R):
        v = X[0]
        F = dual.f(v)
        shift = self.w * (np.maximum(self.V - self.omega, 0.0) + 3.0 * F * F / (1.0 + 2.0 * F * F))
        return [self.ops.solve_free(1.0, shift, R[0])]

    def constraint(self, X):
        if not self.constrained:
            return []
        return [_fsum(self.w * dual.f(X[0]) ** 2)]

    def constraint_grad(self, X):
        if not self.constrained:
            return []
        F = dual.f(X[0])
        return [self.free(self.w * F / np.sqrt(1.0 + 2.0 * F * F))]

    def renormalize(self, X):
        v = X[0]

        def mass(alpha):
            return _fsum(self.w * dual.f(alpha * v) ** 2) - 1.0

        lo, hi = 0.5, 2.0
        for _ in range(200):
            if mass(lo) < 0:
                break
            lo *= 0.5
        for _ in range(200):
            if mass(hi) > 0:
                break
            hi *= 2.0
        if not (mass(lo) < 0 < mass(hi)):
            raise SpecError("mass renormalization bracket failure")
        alpha = brentq(mass, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
        return [alpha * v]

    def generator(self):
        return [{"generator": "f_squared"}]


class GrossPitaevskii(Family):
    multiplier_name = "omega"

    def __init__(self, spec, k, B, mode, omega, V):
        super().__init__(spec)
        self.arity = int(k)
        self.B = np.asarray(B, dtype=float)
        self.mode = mode
        self.constrained = mode == "fixed_mass"
        self.omega = np.zeros(self.arity) if self.constrained else np.asarray(omega, dtype=float)
        self.V = _potential(V, self.grid)
        self.ops = self.grid.ops

    def _rho(self, X):
        return np.stack([x * x for x in X])

    def energy_terms(self, X):
        rho = self._rho(X)
        parts = []
        for i, u in enumerate(X):
            parts.append(0.5 * self.ops.cw * self.ops.sq(u))
            parts.append(0.5 * self.w * (self.V - self.omega[i]) * u * u)
        parts.append(0.25 * self.w * np.einsum("i...,ij,j...->...", rho, self.B, rho))
        return parts

    def grad(self, X):
        rho = self._rho(X)
        Brho = np.einsum("ij,j...->i...", self.B, rho)
        return [self.free(self.ops.div(u, 1.0) + self.w * ((self.V - self.omega[i]) * u + u * Brho[i]))
                for i, u in enumerate(X)]

    def precondition(self, X, R):
        rho = self._rho(X)
        Brho = np.einsum("ij,j...->i...", self.B, rho)
        out = []
        for i, (u, r) in enumerate(zip(X, R)):
            c = (np.maximum(self.V - self.omega[i], 0.0) + np.maximum(Brho[i], 0.0)
                 + 2.0 * max(self.B[i, i], 0.0) * u * u)
            out.append(self.ops.solve_free(1.0, self.w * c, r))
        return out

    def constraint(self, X):
        if not self.constrained:
            return []
        return [_fsum(self.w * u * u) for u in X]

    def constraint_grad(self, X):
        if not self.constrained:
            return []
        return [self.free(self.w * u) for u in X]

    def renormalize(self, X):
        return [u / math.sqrt(_fsum(self.w * u * u)) for u in X]

    def generator(self):
        return [{"generator": "squared"}] * self.arity


class Tabulated(Family):
    positive = False

    def __init__(self, spec, I):
        super().__init__(spec)
        self.I = I

    def energy_terms(self, X):
        return [np.atleast_1d(self.I.value(X[0][0]))]

    def grad(self, X):
        return [np.atleast_1d(self.I.d1(X[0]))]

    def precondition(self, X, R):
        c = max(float(self.I.d2(X[0][0])), 1.0)
        return [R[0] / c]

    @property
    def w(self):
        return np.ones(1)

    def inv_weights(self):
        return np.ones(1)

    def free(self, a):
        return a

    def generator(self):
        return [{"generator": "power", "r": 2.0, "shift": 1.0}]


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------

def _num(params, key, default=None):
    if key not in params:
        if default is None:
            raise SpecError(f"missing parameter {key!r}")
        return default
    try:
        return float(params[key])
    except (TypeError, ValueError) as exc:
        raise SpecError(f"parameter {key!r} must be a number") from exc


_ALLOWED = {name: set(schema) for name, schema in FAMILIES.items()}


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    family: str
    params: dict[str, Any] = field(default_factory=dict)
    grid: Grid | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}")
        extra = set(self.params) - _ALLOWED[self.family]
        if extra:
            raise SpecError(f"{self.family}: unknown parameters {sorted(extra)}")
        if self.family != "tabulated" and self.grid is None:
            raise SpecError(f"{self.family} needs a grid")
        _ = self.model  # validate eagerly

    @cached_property
    def model(self) -> Family:
        return _build(self)

    @property
    def arity(self) -> int:
        return self.model.arity

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, ScalarFn):
                return v.to_dict()
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v
        return {"family": self.family, **{k: enc(v) for k, v in self.params.items()}}


def _build(spec: ProblemSpec) -> Family:
    P, fam, grid = spec.params, spec.family, spec.grid
    dirichlet = grid is not None and grid.domain.dirichlet

    def need_p(key="p"):
        p = _num(P, key)
        if not p > 1:
            raise SpecError(f"{fam}: {key} must exceed 1")
        return p

    if fam == "generalized_plap":
        p = need_p()
        return GradientPower(spec, p, _as_fn(P.get("h", ScalarFn.constant(1.0))), _as_fn(P["g"]), p)
    if fam == "allen_cahn":
        p, q, k = need_p(), _num(P, "q"), _num(P, "k")
        if not q > p:
            raise SpecError("allen_cahn needs q > p")
        return GradientPower(spec, p, None, ScalarFn.allen_cahn(k, p, q), p)
    if fam == "p_eigenvalue":
        return PEigen(spec, need_p(), _num(P, "Lambda"))
    if fam == "nonlinear_boundary":
        p, q = need_p(), need_p("q")
        if not q < p:
            raise SpecError("nonlinear_boundary needs 1 < q < p (the boundary term must be sublinear)")
        if dirichlet:
            raise SpecError("nonlinear_boundary needs a natural-boundary grid")
        return NonlinearBoundary(spec, p, q)
    if fam == "mean_curvature_euclid":
        p = _num(P, "p", 1.5)
        if not 1 < p < 2:
            raise SpecError("mean_curvature_euclid concavity exponent p must lie in (1,2)")
        cap = _num(P, "grad_cap", euclid_cap(p) - 1e-6)
        if not 0 < cap <= euclid_cap(p):
            raise SpecError("grad_cap must not exceed ((2-p)/(p-1))^(1/2)")
        return GradientPower(spec, 2.0, ScalarFn("curvature_h_plus"), _as_fn(P["g"]), p, grad_cap=cap)
    if fam == "mean_curvature_minkowski":
        th = _num(P, "theta")
        if not 0 < th < 1:
            raise SpecError("theta must lie in (0,1)")
        if grid.kind == "radial":
            diam = 2 * grid.domain.bounds[0]
        elif grid.kind == "interval":
            diam = grid.domain.bounds[1] - grid.domain.bounds[0]
        else:
            b = grid.domain.bounds
            diam = math.hypot(b[1] - b[0], b[3] - b[2])
        M = _num(P, "M", diam / 2)
        h = ScalarFn("curvature_h_minus_truncated", {"theta": th})
        return GradientPower(spec, 2.0, h, _as_fn(P["g"]), 2.0, g_cap=M)
    if fam == "fractional":
        s = _num(P, "s")
        if not 0 < s < 1:
            raise SpecError("fractional order s must lie in (0,1)")
        try:
            return Fractional(spec, s, _as_fn(P["g"]))
        except GridError as exc:
            raise SpecError(str(exc)) from exc
    if fam == "hamiltonian_dual":
        p, q = _num(P, "p"), _num(P, "q")
        if not (p > 0 and q > 0):
            raise SpecError("hamiltonian_dual needs p, q > 0")
        if not dirichlet:
            raise SpecError("hamiltonian_dual needs a dirichlet-zero grid")
        return HamiltonianDual(spec, p, q)
    if fam == "schrodinger_dual":
        mode = P.get("mode", "fixed_omega")
        if mode not in ("fixed_omega", "fixed_mass"):
            raise SpecError(f"unknown mode {mode!r}")
        omega = _num(P, "omega") if mode == "fixed_omega" else 0.0
        V = P.get("V", "trap")
        return SchrodingerDual(spec, mode, omega, V if isinstance(V, str) else _as_fn(V))
    if fam == "gross_pitaevskii":
        k = int(_num(P, "k"))
        B = np.asarray(P["B"], dtype=float) if "B" in P else np.zeros((k, k))
        if B.shape != (k, k):
            raise SpecError("B must be a k x k matrix")
        if not np.allclose(B, B.T, rtol=0, atol=0):
            raise SpecError("B must be symmetric")
        mode = P.get("mode", "fixed_mass")
        if mode not in ("fixed_omega", "fixed_mass"):
            raise SpecError(f"unknown mode {mode!r}")
        omega = None
        if mode == "fixed_omega":
            omega = np.atleast_1d(np.asarray(P["omega"], dtype=float))
            if omega.shape != (k,):
                raise SpecError("omega needs one value per component")
        V = P.get("V", "trap")
        return GrossPitaevskii(spec, k, B, mode, omega, V if isinstance(V, str) else _as_fn(V))
    if fam == "tabulated":
        return Tabulated(spec, _as_fn(P["I"]))
    raise SpecError(f"unknown family {fam!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _check_state(spec: ProblemSpec, x: State) -> list[np.ndarray]:
    if len(x) != spec.arity:
        raise SpecError(f"{spec.family} expects {spec.arity} component(s), got {len(x)}")
    if x.grid is not spec.grid and x.grid != spec.grid:
        raise SpecError("state grid does not match the spec grid")
    return x.arrays


def energy(spec: ProblemSpec, x: State) -> float:
    return spec.model.energy(_check_state(spec, x))


def euler_lagrange(spec: ProblemSpec, x: State) -> State:
    """Strong-form residual: raw gradient divided by quadrature weights."""
    m = spec.model
    G = m.grad(_check_state(spec, x))
    iw = m.inv_weights()
    return State.from_arrays(spec.grid, [g * iw for g in G])


def residual_norm(spec: ProblemSpec, x: State, multipliers: Sequence[float] | None = None) -> float:
    """Weighted L2 norm of the residual, sqrt(sum_i w_i r_i^2) over free nodes.

    With ``multipliers`` the constraint gradients are subtracted first.
    """
    m = spec.model
    X = _check_state(spec, x)
    G = m.grad(X)
    if multipliers is not None and m.constrained:
        C = m.constraint_grad(X)
        G = [g - mu * c for g, mu, c in zip(G, multipliers, C)]
    iw = m.inv_weights()
    return math.sqrt(math.fsum(float(np.sum(g * g * iw)) for g in G))


def boundary_energy(spec: ProblemSpec, u: GridFunction | State) -> float:
    """(1/q) times the boundary integral of |u|^q for nonlinear_boundary."""
    if spec.family != "nonlinear_boundary":
        raise SpecError("boundary_energy is defined for nonlinear_boundary only")
    grid = spec.grid
    if grid.domain.dirichlet:
        raise SpecError("boundary_energy needs a natural-boundary grid")
    vals = u.arrays[0] if isinstance(u, State) else u.values
    q = spec.model.q
    return _fsum(grid.boundary_weights * np.abs(vals) ** q) / q


def constraint_value(spec: ProblemSpec, x: State) -> list[float]:
    return spec.model.constraint(_check_state(spec, x))
