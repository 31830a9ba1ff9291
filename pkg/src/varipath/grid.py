"""Uniform grids, quadrature and the discrete operators shared by every family.

Three domain kinds are supported: an interval, a rectangle and a radial
half-line ``[0, R]`` standing in for the whole space ``R^N``.  Nodal arrays
are plain numpy arrays of shape ``grid.shape``; :class:`GridFunction` wraps
them with the grid they live on.

Gradient energies are assembled from *edge* difference quotients.  On 1D
and radial grids an edge is a cell.  On rectangles each cell owns four
edges and the squared gradient of a cell is the mean of its two squared
x-differences plus the mean of its two squared y-differences, which turns
the quadratic energy into the standard five-point Laplacian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma as _gamma

__all__ = [
    "Domain",
    "Grid",
    "GridFunction",
    "CellField",
    "GridError",
    "make_grid",
    "integrate",
    "gradient_cells",
    "poisson_solve",
    "gagliardo_energy",
    "fractional_matrix",
    "sphere_area",
]

DIRICHLET = "dirichlet"
NATURAL = "natural"
CG_RTOL = 1e-12


class GridError(ValueError):
    """Raised for degenerate domains, bad sizes or unsupported operations."""


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere in R^N (2 for N = 1)."""
    return 2.0 * math.pi ** (N / 2.0) / _gamma(N / 2.0)


@dataclass(frozen=True)
class Domain:
    kind: str
    bounds: tuple[float, ...]
    boundary: str = DIRICHLET
    N: int = 1

    def __post_init__(self) -> None:
        if self.kind not in ("interval", "rectangle", "radial"):
            raise GridError(f"unknown domain kind {self.kind!r}")
        if self.boundary not in (DIRICHLET, NATURAL):
            raise GridError(f"unknown boundary kind {self.boundary!r}")
        if self.kind == "interval":
            a, b = self.bounds
            if not a < b:
                raise GridError(f"degenerate domain: interval({a}, {b})")
        elif self.kind == "rectangle":
            ax, bx, ay, by = self.bounds
            if not (ax < bx and ay < by):
                raise GridError("degenerate domain: empty rectangle")
        else:
            (R,) = self.bounds
            if not R > 0:
                raise GridError(f"degenerate domain: radial R={R}")
            if self.N < 1:
                raise GridError("radial dimension N must be >= 1")
            if self.boundary != DIRICHLET:
                raise GridError("radial domains carry dirichlet-zero at r = R")

    @classmethod
    def interval(cls, a: float, b: float, boundary: str = DIRICHLET) -> Domain:
        return cls("interval", (float(a), float(b)), boundary)

    @classmethod
    def rectangle(cls, ax: float, bx: float, ay: float, by: float,
                  boundary: str = DIRICHLET) -> Domain:
        return cls("rectangle", (float(ax), float(bx), float(ay), float(by)), boundary)

    @classmethod
    def radial(cls, N: int, R: float) -> Domain:
        return cls("radial", (float(R),), DIRICHLET, int(N))

    @property
    def dirichlet(self) -> bool:
        return self.boundary == DIRICHLET

    def to_dict(self) -> dict:
        if self.kind == "interval":
            a, b = self.bounds
            return {"kind": "interval", "a": a, "b": b, "boundary": self.boundary}
        if self.kind == "rectangle":
            ax, bx, ay, by = self.bounds
            return {"kind": "rectangle", "ax": ax, "bx": bx, "ay": ay, "by": by,
                    "boundary": self.boundary}
        return {"kind": "radial", "N": self.N, "R": self.bounds[0]}


@dataclass(frozen=True)
class Grid:
    domain: Domain
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8:
            raise GridError(f"need n >= 8 nodes per axis, got {self.n}")

    # -- geometry -------------------------------------------------------
    @property
    def kind(self) -> str:
        return self.domain.kind

    @property
    def ndim(self) -> int:
        return 2 if self.kind == "rectangle" else 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n, self.n) if self.ndim == 2 else (self.n,)

    @property
    def size(self) -> int:
        return self.n ** self.ndim

    @property
    def h(self) -> float:
        """Spacing along the first axis."""
        return self.spacings[0]

    @cached_property
    def spacings(self) -> tuple[float, ...]:
        b = self.domain.bounds
        if self.kind == "interval":
            return ((b[1] - b[0]) / (self.n - 1),)
        if self.kind == "rectangle":
            return ((b[1] - b[0]) / (self.n - 1), (b[3] - b[2]) / (self.n - 1))
        return (b[0] / (self.n - 1),)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        b = self.domain.bounds
        i = np.arange(self.n, dtype=float)
        if self.kind == "interval":
            return (b[0] + i * self.spacings[0],)
        if self.kind == "rectangle":
            return (b[0] + i * self.spacings[0], b[2] + i * self.spacings[1])
        return (i * self.spacings[0],)

    @property
    def x(self) -> np.ndarray:
        """Node coordinates of a 1D or radial grid."""
        return self.axes[0]

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        if self.kind == "radial":
            m[-1] = True
        elif self.kind == "interval":
            m[[0, -1]] = True
        else:
            m[[0, -1], :] = True
            m[:, [0, -1]] = True
        return m

    @cached_property
    def free_mask(self) -> np.ndarray:
        """Nodes whose values are unknowns (everything not pinned to zero)."""
        if self.domain.dirichlet:
            return ~self.boundary_mask
        return np.ones(self.shape, dtype=bool)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Nodes used for positivity and comparability (boundary zeros excluded)."""
        return ~self.boundary_mask if self.domain.dirichlet else np.ones(self.shape, bool)

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quadrature weights: trapezoid, or radial control volumes."""
        if self.kind == "radial":
            N, h, r = self.domain.N, self.h, self.x
            lo = np.maximum(r - h / 2, 0.0)
            hi = np.minimum(r + h / 2, r[-1])
            w = sphere_area(N) / N * (hi ** N - lo ** N)
            return w
        ws = []
        for hk in self.spacings:
            w = np.full(self.n, hk)
            w[[0, -1]] = hk / 2
            ws.append(w)
        if self.ndim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])

    @cached_property
    def cell_weights(self) -> np.ndarray:
        """Quadrature weight of every cell (the measure of the cell)."""
        if self.kind == "radial":
            h = self.h
            rm = (np.arange(self.n - 1) + 0.5) * h
            return sphere_area(self.domain.N) * rm ** (self.domain.N - 1) * h
        if self.ndim == 1:
            return np.full(self.n - 1, self.h)
        hx, hy = self.spacings
        return np.full((self.n - 1, self.n - 1), hx * hy)

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Surface quadrature on boundary nodes (point masses in 1D)."""
        w = np.zeros(self.shape)
        if self.kind == "interval":
            w[[0, -1]] = 1.0
        elif self.kind == "rectangle":
            hx, hy = self.spacings
            w[0, :] += hy
            w[-1, :] += hy
            w[:, 0] += hx
            w[:, -1] += hx
            for c in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
                w[c] = (hx + hy) / 2
        else:
            raise GridError("boundary quadrature is not defined on radial grids")
        return w

    def apply_bc(self, values: np.ndarray) -> np.ndarray:
        if self.domain.dirichlet:
            values = values.copy()
            values[self.boundary_mask] = 0.0
        return values

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "n": self.n}

    # -- operators (cached per grid) ------------------------------------
    @cached_property
    def ops(self) -> EdgeOps:
        return EdgeOps(self)


def make_grid(domain: Domain, n: int) -> Grid:
    return Grid(domain, int(n))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values on a grid.  ``grid=None`` denotes a single scalar unknown."""

    grid: Grid | None
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if self.grid is None:
            # a point in R^1, used by scalar toy problems
            v = v.reshape(1)
            if not np.all(np.isfinite(v)):
                raise GridError("grid function values must be finite")
            v.flags.writeable = False
            object.__setattr__(self, "values", v)
            return
        if v.shape != self.grid.shape:
            raise GridError(f"value shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        v = self.grid.apply_bc(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.grid, values)


@dataclass(frozen=True, eq=False)
class CellField:
    """Per-cell gradient data: components and magnitude at cell midpoints."""

    grid: Grid
    values: np.ndarray
    components: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self) -> None:
        expected = tuple(n - 1 for n in self.grid.shape)
        if self.values.shape != expected:
            raise GridError("cell count must be node count - 1 per axis")
        if not np.all(np.isfinite(self.values)):
            raise GridError("cell values must be finite")


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def integrate(u: GridFunction, weight=None) -> float:
    """Quadrature of ``u`` (times an optional nodal ``weight``)."""
    vals = _values(u)
    if weight is not None:
        vals = vals * _values(weight)
    return math.fsum((u.grid.node_weights * vals).ravel())


class EdgeOps:
    """Difference quotients on edges and their adjoints for one grid.

    ``sq(u)`` returns the squared gradient per cell.  ``div(u, coef)`` is the
    nodal gradient of ``0.5 * sum_c w_c coef_c sq_c(u)`` and ``stiffness(coef)``
    its (linear) Hessian.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.oned = grid.ndim == 1
        self.cw = grid.cell_weights
        if not self.oned:
            self._build_2d()

    def _build_2d(self) -> None:
        n = self.grid.n
        hx, hy = self.grid.spacings
        eye = sp.identity(n, format="csr")
        d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        # x-edges: (i, j) -> (i+1, j); y-edges: (i, j) -> (i, j+1)
        self.Ex = (sp.kron(d1, eye) / hx).tocsr()          # (n-1)*n rows
        self.Ey = (sp.kron(eye, d1) / hy).tocsr()          # n*(n-1) rows
        # cell averaging: cell (i,j) uses x-edges (i,j),(i,j+1) and y-edges (i,j),(i+1,j)
        av = sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        ide = sp.identity(n - 1, format="csr")
        self.Ax = sp.kron(ide, av).tocsr()                 # cells x x-edges
        self.Ay = sp.kron(av, ide).tocsr()                 # cells x y-edges

    def grad_components(self, u: np.ndarray) -> tuple[np.ndarray, ...]:
        if self.oned:
            return (np.diff(u) / self.grid.h,)
        hx, hy = self.grid.spacings
        dx = np.diff(u, axis=0) / hx
        dy = np.diff(u, axis=1) / hy
        return (0.5 * (dx[:, :-1] + dx[:, 1:]), 0.5 * (dy[:-1, :] + dy[1:, :]))

    def sq(self, u: np.ndarray) -> np.ndarray:
        if self.oned:
            d = np.diff(u) / self.grid.h
            return d * d
        hx, hy = self.grid.spacings
        dx = np.diff(u, axis=0) / hx
        dy = np.diff(u, axis=1) / hy
        dx2, dy2 = dx * dx, dy * dy
        return 0.5 * (dx2[:, :-1] + dx2[:, 1:]) + 0.5 * (dy2[:-1, :] + dy2[1:, :])

    def div(self, u: np.ndarray, coef) -> np.ndarray:
        a = self.cw * coef
        if self.oned:
            h = self.grid.h
            flux = a * np.diff(u) / (h * h)
            g = np.zeros_like(u)
            g[:-1] -= flux
            g[1:] += flux
            return g
        n = self.grid.n
        ax = self.Ax.T @ a.ravel()
        ay = self.Ay.T @ a.ravel()
        ux = self.Ex @ u.ravel()
        uy = self.Ey @ u.ravel()
        g = self.Ex.T @ (ax * ux) + self.Ey.T @ (ay * uy)
        return g.reshape(n, n)

    def stiffness(self, coef) -> sp.csr_matrix:
        a = self.cw * coef
        if self.oned:
            h = self.grid.h
            n = self.grid.n
            e = a / (h * h)
            diag = np.zeros(n)
            diag[:-1] += e
            diag[1:] += e
            return sp.diags([diag, -e, -e], [0, -1, 1], format="csr")
        ax = self.Ax.T @ a.ravel()
        ay = self.Ay.T @ a.ravel()
        return (self.Ex.T @ sp.diags(ax) @ self.Ex + self.Ey.T @ sp.diags(ay) @ self.Ey).tocsr()

    # -- solves restricted to free nodes -------------------------------
    def solve_free(self, coef, shift, rhs: np.ndarray) -> np.ndarray:
        """Solve (stiffness(coef) + diag(shift)) x = rhs on free nodes, x = 0 elsewhere.

        ``shift`` is a nodal array (already multiplied by quadrature weights).
        """
        grid = self.grid
        free = grid.free_mask
        out = np.zeros(grid.shape)
        if self.oned:
            a = self.cw * coef
            h = grid.h
            e = a / (h * h)
            diag = np.zeros(grid.n)
            diag[:-1] += e
            diag[1:] += e
            diag = diag + np.broadcast_to(shift, diag.shape)
            idx = np.flatnonzero(free)
            lo, hi = idx[0], idx[-1] + 1
            d = diag[lo:hi]
            off = -e[lo:hi - 1]
            ab = np.zeros((2, hi - lo))
            ab[0, 1:] = off
            ab[1] = d
            out[lo:hi] = scipy.linalg.solveh_banded(ab, rhs[lo:hi], check_finite=False)
            return out
        S = self.stiffness(coef) + sp.diags(np.broadcast_to(shift, grid.shape).ravel())
        fi = np.flatnonzero(free.ravel())
        A = S[fi][:, fi]
        b = rhs.ravel()[fi]
        x, info = spla.cg(A, b, rtol=CG_RTOL, atol=0.0, maxiter=20 * len(fi))
        if info != 0:
            raise GridError(f"conjugate gradient did not converge (info={info})")
        flat = out.ravel()
        flat[fi] = x
        return flat.reshape(grid.shape)


def gradient_cells(u: GridFunction) -> CellField:
    ops = u.grid.ops
    comps = ops.grad_components(u.values)
    mag = np.sqrt(ops.sq(u.values))
    return CellField(u.grid, mag, comps)


def _poisson_array(grid: Grid, f: np.ndarray) -> np.ndarray:
    return grid.ops.solve_free(1.0, 0.0, grid.node_weights * f)


def poisson_solve(f: GridFunction) -> GridFunction:
    """Apply K = (-Delta)^{-1} with zero Dirichlet data."""
    if not f.grid.domain.dirichlet:
        raise GridError("poisson_solve needs a dirichlet-zero grid")
    return GridFunction(f.grid, _poisson_array(f.grid, f.values))


# -- fractional energy -----------------------------------------------------

PADDING_FACTOR = 4.0


@lru_cache(maxsize=32)
def fractional_matrix(grid: Grid, s: float) -> np.ndarray:
    """Matrix L on free nodes with gagliardo_energy(u) = u_f^T L u_f / 2.

    Pairs of nodes at distance k*h >= 2h use the midpoint rule
    h^2 / |x - y|^{1+2s}.  Touching cells use the exact integral of
    |x - y|^{1-2s} (the kernel times a linear difference squared), with the
    self-cell near-diagonal part folded onto the adjacent pair.
    Exterior zero nodes extend PADDING_FACTOR*(b - a) beyond each end and
    the remaining tail of the kernel is added in closed form.
    """
    if not 0.0 < s < 1.0:
        raise GridError(f"fractional order s must lie in (0,1), got {s}")
    if grid.kind != "interval" or not grid.domain.dirichlet:
        raise GridError("fractional energy needs a dirichlet-zero interval grid")
    n, h = grid.n, grid.h
    a = 1.0 - 2.0 * s
    pad = int(round(PADDING_FACTOR * (n - 1)))
    kmax = n + pad
    k = np.arange(kmax + 1, dtype=float)
    kern = np.zeros(kmax + 1)
    kern[2:] = h ** a * k[2:] ** (a - 2.0)
    kern[1] = h ** a * (2.0 ** (a + 2.0) - 1.0) / ((a + 1.0) * (a + 2.0))
    csum = np.cumsum(kern)
    i = np.arange(n)
    # all partners j != i with j in [-pad, n-1+pad]: distances 1..i+pad to the left
    diag = csum[i + pad] + csum[n - 1 + pad - i]
    # exact zero-extension tail beyond the padded cells (diagonal only)
    dl = (i + pad + 0.5) * h
    dr = (n - 1 + pad - i + 0.5) * h
    diag = diag + h * (dl ** (-2.0 * s) + dr ** (-2.0 * s)) / (2.0 * s)
    dist = np.abs(i[:, None] - i[None, :])
    L = -kern[dist]
    L[i, i] = diag
    free = np.flatnonzero(grid.free_mask)
    L = np.ascontiguousarray(L[np.ix_(free, free)])
    L.flags.writeable = False
    return L


def gagliardo_energy(u: GridFunction, s: float) -> float:
    """(1/4) double integral of |u(x)-u(y)|^2 / |x-y|^{1+2s}, u zero outside."""
    L = fractional_matrix(u.grid, float(s))
    uf = u.values[u.grid.free_mask]
    return 0.5 * math.fsum(uf * (L @ uf))
