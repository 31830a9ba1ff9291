"""Critical-point solvers.

Descent runs in a state-dependent metric: the search direction is the raw
gradient mapped through the family's positive definite preconditioner (a
frozen-coefficient stiffness matrix plus the convex part of the lower-order
terms).  Every accepted step decreases the energy as evaluated; steps start
at ``opts.step``, shrink by ``opts.backtrack`` on rejection and grow by
``opts.growth`` after acceptance.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, root

from . import fields
from .grid import Domain, Grid, make_grid
from .problems import ProblemSpec, RegimeError, SpecError, State
from .scalarfn import ScalarFn

__all__ = [
    "FlowOptions",
    "SolveReport",
    "Cluster",
    "UniquenessReport",
    "SolverError",
    "gradient_flow",
    "normalized_flow",
    "solve",
    "shooting_oracle",
    "lambda_V_estimate",
    "fractional_eigenvalue",
    "multistart",
    "random_start",
    "relative_sup_distance",
    "thread_count",
]

MERGE_RADIUS = 1e-3
CLAMP_WINDOW = 100
TRIVIAL_LEVEL = 1e-6


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowOptions:
    max_iters: int = 20000
    step: float = 1.0
    tol_res: float = 1e-8
    eps_pos: float = 1e-10
    backtrack: float = 0.5
    growth: float = 1.1
    max_step: float = 1e6
    min_step: float = 1e-16
    seed: int = 0
    trace: bool = False

    def __post_init__(self) -> None:
        if not self.tol_res > 0:
            raise ValueError("tol_res must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0,1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolveReport:
    state: State
    energy: float
    residual: float
    multipliers: list[float]
    iterations: int
    converged: bool
    positivity: float
    clamp_iterations: list[int] = field(default_factory=list)
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    message: str = ""
    truncation_rerun: bool = False

    @property
    def persistent_clamp(self) -> bool:
        """True if a clamp fired within the final window of the run.

        The window is CLAMP_WINDOW iterations, shortened to the second half
        of runs that converge faster than that.
        """
        window = min(CLAMP_WINDOW, self.iterations // 2)
        return any(it > self.iterations - window for it in self.clamp_iterations)

    @property
    def trivial(self) -> bool:
        return max(float(np.max(np.abs(a))) for a in self.state.arrays) <= TRIVIAL_LEVEL

    @property
    def positive(self) -> bool:
        """Member of the positive-solution set: converged, positive, no persistent clamping."""
        return self.converged and self.positivity > 0 and not self.persistent_clamp and not self.trivial

    def to_dict(self, include_state: bool = False) -> dict:
        d = {
            "energy": self.energy,
            "residual": self.residual,
            "multipliers": list(self.multipliers),
            "iterations": self.iterations,
            "converged": self.converged,
            "positivity": self.positivity,
            "positive": self.positive,
            "clamp_events": len(self.clamp_iterations),
            "message": self.message,
            "truncation_rerun": self.truncation_rerun,
        }
        if include_state:
            d["state"] = [a.tolist() for a in self.state.arrays]
        return d


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _inner(a: np.ndarray, b: np.ndarray, iw: np.ndarray) -> float:
    return float(np.sum(a * b * iw))


def _clamp(model, X: list[np.ndarray], eps: float,
           ref: list[np.ndarray] | None = None) -> tuple[list[np.ndarray], int]:
    """Raise free nodes to the positivity floor.

    The floor is ``eps`` times the previous value of the node (``ref``), so
    a step may shrink a node by at most a factor 1/eps and never flip its
    sign, while genuinely tiny tails stay unclamped.  Without ``ref`` the
    floor is ``eps`` times the component maximum.
    """
    if not model.positive:
        return X, 0
    mask = model.grid.free_mask if model.grid is not None else np.ones(np.shape(X[0]), bool)
    out, count = [], 0
    for i, x in enumerate(X):
        if ref is None:
            floor = eps * max(float(np.max(x)), 0.0)
        else:
            floor = eps * np.maximum(ref[i], 0.0)
        low = mask & (x < floor)
        c = int(np.count_nonzero(low))
        if c:
            x = np.where(low, floor, x)
            count += c
        out.append(x)
    return out, count


def _positivity(model, X) -> float:
    if model.grid is None:
        return float(min(np.min(x) for x in X))
    m = model.grid.interior_mask
    return float(min(np.min(x[m]) for x in X))


ROUNDOFF_SLACK = 16 * np.finfo(float).eps


def _safe_energy(model, X) -> tuple[float, float]:
    try:
        e, mag = model.flow_energy(X)
    except RegimeError:
        return math.inf, math.inf
    return (e, mag) if math.isfinite(e) else (math.inf, math.inf)


def _multipliers(model, G, C, iw) -> list[float]:
    return [_inner(g, c, iw) / _inner(c, c, iw) for g, c in zip(G, C)]


def _residual(G, iw) -> float:
    return math.sqrt(math.fsum(_inner(g, g, iw) for g in G))


def _trial_residual(model, X, iw, normalized: bool) -> float:
    try:
        G = model.grad(X)
    except RegimeError:
        return math.inf
    if not normalized:
        return _residual(G, iw)
    C = model.constraint_grad(X)
    mu = _multipliers(model, G, C, iw)
    return _residual([g - m * c for g, m, c in zip(G, mu, C)], iw)


def _run(spec: ProblemSpec, init: State, opts: FlowOptions, normalized: bool) -> SolveReport:
    model = spec.model
    if len(init) != model.arity:
        raise SpecError(f"{spec.family} expects {model.arity} component(s)")
    iw = model.inv_weights()
    X = [np.array(a, dtype=float) for a in init.arrays]
    X, _ = _clamp(model, X, opts.eps_pos)
    if normalized:
        X = model.renormalize(X)
    model.check_regime(X)
    E, mag = model.flow_energy(X)
    step = opts.step
    clamps: list[int] = []
    trace: list[tuple[int, float, float]] = []
    converged = False
    message = "max_iters reached"
    mu: list[float] = []
    it = 0
    res = math.inf
    for it in range(opts.max_iters + 1):
        G = model.grad(X)
        if normalized:
            C = model.constraint_grad(X)
            mu = _multipliers(model, G, C, iw)
            res = _residual([g - m * c for g, m, c in zip(G, mu, C)], iw)
        else:
            res = _residual(G, iw)
        if opts.trace:
            trace.append((it, E, res))
        if res <= opts.tol_res:
            converged = True
            message = "converged"
            break
        if it == opts.max_iters:
            break
        P = model.precondition(X, G)
        if normalized:
            PC = model.precondition(X, C)
            lam = [float(np.sum(p * c)) / float(np.sum(q * c)) for p, q, c in zip(P, PC, C)]
            D = [-(p - l * q) for p, l, q in zip(P, lam, PC)]
        else:
            D = [-p for p in P]
        s = step
        accepted = False
        while s >= opts.min_step:
            trial = [x + s * d for x, d in zip(X, D)]
            trial, nclamp = _clamp(model, trial, opts.eps_pos, X)
            if normalized:
                try:
                    trial = model.renormalize(trial)
                except SpecError:
                    s *= opts.backtrack
                    continue
            Et, mag_t = _safe_energy(model, trial)
            # within roundoff of E the energy cannot rank steps: then the residual must drop
            noise = ROUNDOFF_SLACK * mag
            plateau = Et >= E - noise
            ok = Et <= E + noise if plateau else Et <= E
            if ok and plateau:
                ok = _trial_residual(model, trial, iw, normalized) < res
            grow = not plateau
            if ok:
                X, E, mag = trial, Et, mag_t
                if nclamp:
                    clamps.append(it + 1)
                # a plateau step restarts from the nominal step: the preconditioned
                # direction has natural length 1 and backtracking may have shrunk s
                step = min(s * opts.growth, opts.max_step) if grow else max(s, opts.step)
                accepted = True
                break
            s *= opts.backtrack
        if not accepted:
            message = "line search stagnated"
            it += 1
            G = model.grad(X)
            if normalized:
                C = model.constraint_grad(X)
                mu = _multipliers(model, G, C, iw)
                res = _residual([g - m * c for g, m, c in zip(G, mu, C)], iw)
            else:
                res = _residual(G, iw)
            converged = res <= opts.tol_res
            break
    state = State.from_arrays(spec.grid, X)
    mults = model.report_multipliers(X, mu) if normalized else []
    return SolveReport(state=state, energy=model.energy(X), residual=res, multipliers=mults, iterations=it,
                       converged=converged, positivity=_positivity(model, X),
                       clamp_iterations=clamps, trace=trace, message=message)


def gradient_flow(spec: ProblemSpec, init: State, opts: FlowOptions = FlowOptions()) -> SolveReport:
    """Monotone preconditioned descent on the unconstrained energy.

    Raises :class:`RegimeError` when the initial state is outside the
    family's regime or the flow cannot continue without leaving it.
    """
    rep = _run(spec, init, opts, normalized=False)
    if getattr(spec.model, "grad_cap", None) is not None and rep.message == "line search stagnated" \
            and not rep.converged:
        raise RegimeError("flow cannot proceed inside the gradient cap")
    return rep


def normalized_flow(spec: ProblemSpec, init: State, opts: FlowOptions = FlowOptions()) -> SolveReport:
    """Descent on the constraint manifold with renormalization after each step."""
    if not spec.model.constrained:
        raise SpecError(f"{spec.family} has no mass constraint in this mode")
    masses = spec.model.constraint(init.arrays)
    if any(not m > 0 for m in masses):
        raise SpecError("initial state needs positive masses")
    return _run(spec, init, opts, normalized=True)


def _respec(spec: ProblemSpec, grid: Grid) -> ProblemSpec:
    return ProblemSpec(spec.family, dict(spec.params), grid)


def solve(spec: ProblemSpec, init: State, opts: FlowOptions = FlowOptions()) -> SolveReport:
    """Dispatch to the right flow; radial solves get one truncation re-run at 1.5 R."""
    flow = normalized_flow if spec.model.constrained else gradient_flow
    rep = flow(spec, init, opts)
    grid = spec.grid
    if grid is not None and grid.kind == "radial" and rep.converged:
        arrays = rep.state.arrays
        mx = max(float(np.max(np.abs(a))) for a in arrays)
        edge = max(float(abs(a[-2])) for a in arrays)
        if edge > 1e-8 * mx:
            R = grid.domain.bounds[0] * 1.5
            n = int(round((grid.n - 1) * 1.5)) + 1
            g2 = make_grid(Domain.radial(grid.domain.N, R), n)
            init2 = State.from_arrays(g2, [np.interp(g2.x, grid.x, a, right=0.0) for a in arrays])
            rep = flow(_respec(spec, g2), init2, opts)
            rep.truncation_rerun = True
    return rep


# ---------------------------------------------------------------------------
# eigenvalue of -Delta + V
# ---------------------------------------------------------------------------

def lambda_V_estimate(V: ScalarFn | str, grid: Grid, tol: float = 1e-8, max_iters: int = 10000) -> float:
    """Smallest eigenvalue of -Delta + V (dirichlet-zero) by inverse-power iteration."""
    from .problems import _potential

    if not grid.domain.dirichlet:
        raise SpecError("lambda_V_estimate needs a dirichlet-zero grid")
    Vn = _potential(V, grid)
    sigma = float(np.min(Vn))
    Vs = Vn - sigma
    w = grid.node_weights
    free = grid.free_mask
    iw = np.where(free, 1.0 / np.where(w > 0, w, 1.0), 0.0)
    ops = grid.ops
    x = np.where(free, fields.envelope(grid) + 0.1, 0.0)
    lam = math.nan
    for _ in range(max_iters):
        y = ops.solve_free(1.0, w * Vs, w * x)
        y /= math.sqrt(float(np.sum(w * y * y)))
        Ay = ops.div(y, 1.0) + w * Vs * y
        lam = float(np.sum(Ay * y))
        r = np.where(free, Ay - lam * w * y, 0.0)
        x = y
        if math.sqrt(float(np.sum(r * r * iw))) <= tol * max(1.0, abs(lam)):
            return lam + sigma
    raise SolverError("inverse-power iteration stagnated")


def fractional_eigenvalue(grid: Grid, s: float) -> float:
    """Smallest eigenvalue of the discrete fractional operator against the node weights."""
    import scipy.linalg

    from .grid import fractional_matrix

    L = fractional_matrix(grid, float(s))
    w = grid.node_weights[grid.free_mask]
    return float(scipy.linalg.eigh(L, np.diag(w), eigvals_only=True, subset_by_index=[0, 0])[0])


# ---------------------------------------------------------------------------
# shooting oracle
# ---------------------------------------------------------------------------

_IVP = dict(method="DOP853", rtol=1e-12, atol=1e-14)


def _phi_inv(phi, p):
    return np.sign(phi) * np.abs(phi) ** (1.0 / (p - 1.0))


def _first_sign_change(F: Callable[[float], float], params: np.ndarray) -> tuple[float, float]:
    prev_s, prev = params[0], F(params[0])
    for s in params[1:]:
        cur = F(s)
        if np.isfinite(prev) and np.isfinite(cur) and np.sign(prev) != np.sign(cur):
            return prev_s, s
        prev_s, prev = s, cur
    raise SolverError("no sign change found in the shooting bracket")


def _shoot_scalar(grid: Grid, p: float, g: Callable, param_is_lambda: bool = False):
    """Positive symmetric solution of -(|u'|^{p-2}u')' = g(u) on an interval, u = 0 at the ends."""
    a, b = grid.domain.bounds
    L = b - a
    half = L / 2

    def rhs(lam):
        def f(x, y):
            u, phi = y
            gu = lam * np.sign(u) * abs(u) ** (p - 1) if param_is_lambda else g(u)
            return [_phi_inv(phi, p), -gu]
        return f

    def run(s, upto, dense=False):
        if param_is_lambda:
            return solve_ivp(rhs(s), (0, upto), [0.0, 1.0], dense_output=dense, **_IVP)
        return solve_ivp(rhs(None), (0, upto), [0.0, s], dense_output=dense, **_IVP)

    def F(s):
        sol = run(s, half)
        return sol.y[1, -1] if sol.success else math.nan

    if param_is_lambda:
        grid_s = np.geomspace(1e-2, 1e4, 61)          # increasing Lambda: F goes + to -
    else:
        grid_s = np.geomspace(1e6, 1e-8, 141)          # decreasing slope parameter
    lo, hi = _first_sign_change(F, grid_s)
    s = brentq(F, min(lo, hi), max(lo, hi), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    full = run(s, L, dense=True)
    u_end = full.y[0, -1]
    scale = float(np.max(np.abs(full.y[0])))
    if abs(u_end) > 1e-10 * max(1.0, scale):
        raise SolverError(f"shooting boundary residual {abs(u_end):.2e} exceeds 1e-10")
    left = run(s, half, dense=True)
    xs = grid.x - a
    xm = np.minimum(xs, L - xs)
    u = left.sol(xm)[0]
    return u, s


def _shoot_natural(grid: Grid, p: float, q: float):
    """-(phi_p(u'))' + phi_p(u) = 0, with phi_p(u') = -+ |u|^{q-2}u at the left/right ends."""
    a, b = grid.domain.bounds
    L = b - a

    def f(x, y):
        u, phi = y
        return [_phi_inv(phi, p), np.sign(u) * abs(u) ** (p - 1)]

    def run(c, upto, dense=False):
        return solve_ivp(f, (0, upto), [c, -c ** (q - 1)], dense_output=dense, **_IVP)

    def F(c):
        sol = run(c, L / 2)
        return sol.y[1, -1] if sol.success else math.nan

    lo, hi = _first_sign_change(F, np.geomspace(1e4, 1e-6, 101))
    c = brentq(F, min(lo, hi), max(lo, hi), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    full = run(c, L, dense=True)
    u1, phi1 = full.y[:, -1]
    if abs(phi1 - abs(u1) ** (q - 1)) > 1e-10 * max(1.0, abs(phi1)):
        raise SolverError("shooting boundary residual exceeds 1e-10")
    xs = grid.x - a
    return full.sol(xs)[0]


def _shoot_hamiltonian(grid: Grid, p: float, q: float):
    """-u'' = |v|^{q-1}v, -v'' = |u|^{p-1}u on an interval with zero ends."""
    a, b = grid.domain.bounds
    L = b - a
    half = L / 2

    def f(x, y):
        u, du, v, dv = y
        return [du, -np.sign(v) * abs(v) ** q, dv, -np.sign(u) * abs(u) ** p]

    def run(s, upto, dense=False):
        return solve_ivp(f, (0, upto), [0.0, s[0], 0.0, s[1]], dense_output=dense, **_IVP)

    def F(s):
        y = run(s, half).y[:, -1]
        return [y[1], y[3]]

    # initial guess from the symmetric scalar problem -u'' = u^{(p+q)/2}
    r = 0.5 * (p + q)
    _, s0 = _shoot_scalar(grid, 2.0, lambda u: np.sign(u) * abs(u) ** r)
    sol = root(F, [s0, s0], method="hybr", options={"xtol": 1e-14})
    if not sol.success:
        raise SolverError(f"Hamiltonian shooting failed: {sol.message}")
    full = run(sol.x, L, dense=True)
    end = full.y[:, -1]
    scale = float(np.max(np.abs(full.y[[0, 2]])))
    if max(abs(end[0]), abs(end[2])) > 1e-10 * max(1.0, scale):
        raise SolverError("shooting boundary residual exceeds 1e-10")
    left = run(sol.x, half, dense=True)
    xs = grid.x - a
    Y = left.sol(np.minimum(xs, L - xs))
    return Y[0], Y[2]


def shooting_oracle(spec: ProblemSpec) -> State:
    """Independent 1D shooting solution for families with a two-point reduction.

    Returns the positive solution resampled to the spec grid.  For
    p_eigenvalue the eigenfunction is normalized like the normalized flow
    (integral of |u|^p equal to 1) and the eigenvalue is stored on the
    returned object as ``eigenvalue``.  For hamiltonian_dual the returned
    state holds (u, v), not (f, g).
    """
    grid = spec.grid
    if grid is None or grid.kind != "interval":
        raise SpecError("shooting needs an interval grid")
    m = spec.model
    fam = spec.family
    if fam in ("generalized_plap", "allen_cahn"):
        if m.h is not None:
            raise SpecError("shooting supports h = constant(1) only")
        u, _ = _shoot_scalar(grid, m.p, lambda t: float(m.g.value(t)))
        return State.from_arrays(grid, [u])
    if fam == "p_eigenvalue":
        u, lam = _shoot_scalar(grid, m.p, None, param_is_lambda=True)
        u = u / float(np.sum(grid.node_weights * np.abs(u) ** m.p)) ** (1.0 / m.p)
        st = State.from_arrays(grid, [u])
        object.__setattr__(st, "eigenvalue", lam)
        return st
    if fam == "nonlinear_boundary":
        return State.from_arrays(grid, [_shoot_natural(grid, m.p, m.q)])
    if fam == "hamiltonian_dual":
        u, v = _shoot_hamiltonian(grid, m.p, m.q)
        return State.from_arrays(grid, [u, v])
    raise SpecError(f"{fam} has no shooting reduction")


# ---------------------------------------------------------------------------
# multistart
# ---------------------------------------------------------------------------

def thread_count(requested: int | None = None) -> int:
    if requested is None:
        try:
            requested = int(os.environ.get("VARIPATH_THREADS", "0"))
        except ValueError:
            requested = 0
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def random_start(spec: ProblemSpec, rng: np.random.Generator) -> State:
    """Smoothed-noise positive start adapted to the family's boundary and regime."""
    grid = spec.grid
    model = spec.model
    env = fields.envelope(grid)
    arrays = [env * fields.positive_field(rng, grid.shape) for _ in range(model.arity)]
    cap = getattr(model, "grad_cap", None)
    if spec.family == "mean_curvature_minkowski":
        cap = 1.0 - float(spec.params["theta"])
    if cap is not None:
        ops = grid.ops
        arrays = [a * (0.5 * cap / math.sqrt(float(np.max(ops.sq(a))))) for a in arrays]
    return State.from_arrays(grid, arrays)


def relative_sup_distance(x: State, y: State) -> float:
    num = max(float(np.max(np.abs(a - b))) for a, b in zip(x.arrays, y.arrays))
    den = max(max(float(np.max(np.abs(a))) for a in x.arrays),
              max(float(np.max(np.abs(b))) for b in y.arrays))
    return num / den if den > 0 else 0.0


@dataclass
class Cluster:
    representative: State
    members: list[int]
    max_intra: float

    def to_dict(self) -> dict:
        return {"members": list(self.members), "count": len(self.members), "max_intra_distance": self.max_intra}


@dataclass
class UniquenessReport:
    n_starts: int
    reports: list[SolveReport]
    accepted: list[int]
    excluded: list[int]
    clusters: list[Cluster]
    inter_distances: list[tuple[int, int, float]]
    pair_checks: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def to_dict(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "accepted": list(self.accepted),
            "excluded": list(self.excluded),
            "n_clusters": self.n_clusters,
            "clusters": [c.to_dict() for c in self.clusters],
            "inter_distances": [list(t) for t in self.inter_distances],
            "solves": [r.to_dict() for r in self.reports],
            "pair_checks": [p.to_dict() for p in self.pair_checks],
        }


def _cluster(states: Sequence[State], ids: Sequence[int], radius: float) -> list[Cluster]:
    clusters: list[Cluster] = []
    for i, st in zip(ids, states):
        for c in clusters:
            d = relative_sup_distance(c.representative, st)
            if d <= radius:
                c.members.append(i)
                c.max_intra = max(c.max_intra, d)
                break
        else:
            clusters.append(Cluster(st, [i], 0.0))
    return clusters


def multistart(spec: ProblemSpec, n_starts: int, seed: int, opts: FlowOptions = FlowOptions(),
               threads: int | None = None, check_pairs: bool = True,
               merge_radius: float = MERGE_RADIUS) -> UniquenessReport:
    if n_starts < 2:
        raise ValueError("multistart needs n_starts >= 2")
    seqs = np.random.SeedSequence(seed).spawn(n_starts)

    def one(i: int) -> SolveReport:
        rng = np.random.default_rng(seqs[i])
        init = random_start(spec, rng)
        try:
            return solve(spec, init, replace(opts, seed=seed))
        except RegimeError as exc:
            return SolveReport(init, math.nan, math.inf, [], 0, False, 0.0, message=f"regime: {exc}")

    nt = min(thread_count(threads), n_starts)
    if nt == 1:
        reports = [one(i) for i in range(n_starts)]
    else:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            reports = list(ex.map(one, range(n_starts)))
    accepted = [i for i, r in enumerate(reports) if r.positive]
    excluded = [i for i in range(n_starts) if i not in accepted]
    states = [reports[i].state for i in accepted]
    clusters = _cluster(states, accepted, merge_radius)
    inter = []
    for a in range(len(clusters)):
        for b in range(a + 1, len(clusters)):
            inter.append((a, b, relative_sup_distance(clusters[a].representative, clusters[b].representative)))
    checks = []
    if check_pairs and len(states) >= 2:
        from .paths import theorem1_check

        checks = theorem1_check(spec, states, labels=accepted)
    return UniquenessReport(n_starts, reports, accepted, excluded, clusters, inter, checks)
