"""Randomized and deterministic oracles for the pointwise inequalities behind
path convexity, with directed counterexample search where they must fail.

Every randomized oracle splits its trials into fixed-size chunks, draws each
chunk from its own ``SeedSequence`` child and merges the partial reports in
chunk order.  Results therefore do not depend on how many threads run them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import dual, fields
from .grid import Domain, Grid, GridError, make_grid
from .problems import ProblemSpec, SpecError, State
from .scalarfn import ScalarFn
from .solvers import thread_count

__all__ = [
    "IneqReport", "HessianReport", "SystemConcavityReport", "GPIdentity",
    "check_gin", "hessian_criterion", "check_fractional_pointwise",
    "check_operator_minkowski", "minkowski_refinement", "scalar_q_monotone",
    "check_q_monotone", "check_system_concavity", "check_f_properties",
    "gp_energy_identity", "SLACK", "EQUALITY_TOL", "GAMMA_CAP",
]

SLACK = 1e-10          # violation threshold on normalized margins
EQUALITY_TOL = 1e-10   # |margin| below this counts as an equality
GAMMA_CAP = 1e6        # truncation of an unbounded density band
CHUNK = 1 << 15


@dataclass
class IneqReport:
    name: str
    params: dict[str, Any]
    trials: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    witness: dict[str, Any] | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.violations == 0:
            self.witness = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def merge(self, other: IneqReport) -> IneqReport:
        """Associative merge; the witness with the smaller margin wins (ties: self)."""
        witness = self.witness
        if other.witness is not None and (witness is None
                                          or other.witness["margin"] < witness["margin"]):
            witness = other.witness
        return IneqReport(self.name, self.params, self.trials + other.trials,
                          self.violations + other.violations,
                          min(self.worst_margin, other.worst_margin), witness,
                          _merge_details(self.details, other.details))

    def to_dict(self) -> dict[str, Any]:
        d = {"name": self.name, "params": self.params, "trials": self.trials,
             "violations": self.violations, "worst_margin": self.worst_margin,
             "witness": self.witness}
        if self.details:
            d["details"] = self.details
        return d


def _merge_details(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        if k in out and isinstance(v, int) and isinstance(out[k], int):
            out[k] += v
        else:
            out[k] = v
    return out


def _chunk_report(name: str, params: dict, margin: np.ndarray,
                  inputs: dict[str, np.ndarray], slack: float) -> IneqReport:
    bad = margin < -slack
    rep = IneqReport(name, params, int(margin.size), int(bad.sum()),
                     float(margin.min()) if margin.size else math.inf)
    if rep.violations:
        k = int(np.argmin(margin))
        rep.witness = {key: _jsonable(val[k]) for key, val in inputs.items()}
        rep.witness["margin"] = float(margin[k])
    return rep


def _jsonable(x):
    x = np.asarray(x)
    return x.tolist() if x.ndim else float(x)


def _run_chunks(trials: int, seed: int, work: Callable[[np.random.Generator, int], IneqReport],
                name: str, params: dict) -> IneqReport:
    if trials < 1:
        raise ValueError("trials must be positive")
    sizes = [CHUNK] * (trials // CHUNK)
    if trials % CHUNK:
        sizes.append(trials % CHUNK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(children, sizes))

    def one(job):
        ss, m = job
        return work(np.random.default_rng(ss), m)

    nt = min(thread_count(), len(jobs))
    if nt > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(one, jobs))
    else:
        parts = [one(j) for j in jobs]
    total = IneqReport(name, params)
    for part in parts:
        total = total.merge(part)
    return total


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


# ---------------------------------------------------------------------------
# concavity lemma
# ---------------------------------------------------------------------------

def _gin_margin(Q: ScalarFn, M: ScalarFn, u, v, gu, gv, t):
    """Normalized slack of M(|grad gamma|) <= (1-t)M(|grad u|) + tM(|grad v|)."""
    q = (1 - t) * Q.value(u) + t * Q.value(v)
    g = Q.inverse(q)
    grad = ((1 - t)[:, None] * Q.d1(u)[:, None] * gu
            + t[:, None] * Q.d1(v)[:, None] * gv) / Q.d1(g)[:, None]
    lhs = M.value(np.hypot(grad[:, 0], grad[:, 1]))
    rhs = (1 - t) * M.value(np.hypot(*gu.T)) + t * M.value(np.hypot(*gv.T))
    return (rhs - lhs) / np.maximum(1.0, np.abs(rhs)), lhs, rhs


def gin_value(Q: ScalarFn, M: ScalarFn, u: float, v: float, gu, gv, t: float) -> tuple[float, float]:
    """(LHS, RHS) of the concavity-lemma inequality at one scalar datum."""
    _, lhs, rhs = _gin_margin(Q, M, np.array([u], float), np.array([v], float),
                              np.asarray(gu, float)[None, :], np.asarray(gv, float)[None, :],
                              np.array([t], float))
    return float(lhs[0]), float(rhs[0])


def check_gin(Q: ScalarFn, M: ScalarFn, trials: int = 10_000, seed: int = 0,
              value_range: tuple[float, float] = (1e-3, 1e3), gamma: float = GAMMA_CAP,
              slack: float = SLACK) -> IneqReport:
    """Random search for violations of the pointwise concavity-lemma inequality.

    Values u, v are log-uniform in ``value_range`` (a floor away from 0 keeps
    Q'(gamma) away from a possible singularity).  Gradient magnitudes are
    M^{-1} of log-uniform levels in (M(0), gamma]; directions are uniform in
    the plane.
    """
    m0 = float(M.value(0.0))
    if not gamma > m0:
        raise ValueError("gamma must exceed M(0)")
    params = {"Q": Q.to_dict(), "M": M.to_dict(), "seed": seed, "slack": slack,
              "value_range": list(value_range), "gamma": gamma}
    lo, hi = value_range

    def work(rng, m):
        u = _log_uniform(rng, lo, hi, m)
        v = _log_uniform(rng, lo, hi, m)
        t = rng.uniform(0.0, 1.0, m)
        grads = []
        for _ in range(2):
            level = m0 + _log_uniform(rng, 1e-6 * max(1.0, gamma - m0), gamma - m0, m)
            mag = M.inverse(level)
            ang = rng.uniform(0.0, 2 * math.pi, m)
            grads.append(np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1))
        margin, _, _ = _gin_margin(Q, M, u, v, grads[0], grads[1], t)
        return _chunk_report("check_gin", params, margin,
                             {"u": u, "v": v, "grad_u": grads[0], "grad_v": grads[1], "t": t},
                             slack)

    return _run_chunks(trials, seed, work, "check_gin", params)


@dataclass
class HessianReport:
    z1: np.ndarray
    z2: np.ndarray
    det: np.ndarray            # F1 F1'' F2 F2'' - (F1' F2')^2
    factor1: np.ndarray        # (F1/F1')' - 1 = -F1 F1''/F1'^2
    factor2: np.ndarray
    d2_1: np.ndarray
    d2_2: np.ndarray

    @property
    def product(self) -> np.ndarray:
        return self.factor1[:, None] * self.factor2[None, :]

    @property
    def relative_det(self) -> np.ndarray:
        """det / (F1'F2')^2, which equals product - 1."""
        return self.product - 1.0

    @property
    def certified(self) -> bool:
        tol = 64 * np.finfo(float).eps
        return bool(np.all(self.d2_1 <= 0) and np.all(self.d2_2 <= 0)
                    and np.all(self.relative_det >= -tol))

    def to_dict(self) -> dict:
        rd = self.relative_det
        return {"certified": self.certified, "min_relative_det": float(rd.min()),
                "max_abs_relative_det": float(np.abs(rd).max()),
                "min_factor_product": float(self.product.min()),
                "z1": [float(self.z1[0]), float(self.z1[-1])],
                "z2": [float(self.z2[0]), float(self.z2[-1])]}


def _axis(lo, hi, n):
    return np.geomspace(lo, hi, n) if lo > 0 else np.linspace(lo, hi, n)


def hessian_criterion(Q: ScalarFn, M: ScalarFn, band: dict) -> HessianReport:
    """Sign field of the concavity determinant for F(z1, z2) = F1(z1) F2(z2).

    F1 = Q' o Q^{-1} and F2 = M^{-1}.  ``band`` holds ``z1`` and ``z2`` as
    (lo, hi) pairs, both open at the ends, and optionally ``n`` lattice points.
    """
    n = int(band.get("n", 33))
    z1 = _axis(*band["z1"], n + 2)[1:-1]
    z2 = _axis(*band["z2"], n + 2)[1:-1]
    s1 = Q.inverse(z1)
    q1, q2, q3 = Q.d1(s1), Q.d2(s1), Q.d3(s1)
    F1 = q1
    F1p = q2 / q1
    F1pp = (q3 * q1 - q2 * q2) / q1 ** 3
    s2 = M.inverse(z2)
    m1, m2 = M.d1(s2), M.d2(s2)
    F2 = s2
    F2p = 1.0 / m1
    F2pp = -m2 / m1 ** 3
    det = (F1 * F1pp)[:, None] * (F2 * F2pp)[None, :] - (F1p[:, None] * F2p[None, :]) ** 2
    return HessianReport(z1, z2, det, -F1 * F1pp / F1p ** 2, -F2 * F2pp / F2p ** 2, F1pp, F2pp)


# ---------------------------------------------------------------------------
# fractional pointwise inequality
# ---------------------------------------------------------------------------

FIELD_NODES = 257
FIELDS_PER_CHUNK = 16


def _scalar_fractional_margin(a, b, c, d):
    lhs = np.abs(np.hypot(a, c) - np.hypot(b, d))
    rhs = np.hypot(a - b, c - d)
    return (rhs - lhs) / np.maximum(1.0, rhs)


def check_fractional_pointwise(trials: int = 10_000, seed: int = 0,
                               slack: float = SLACK) -> IneqReport:
    """Reverse triangle inequality in the plane plus its squared-path field form.

    Half the trials use random reals (a, b, c, d); the other half evaluate
    (gamma(x)-gamma(y))^2 <= (1-t)(u(x)-u(y))^2 + t(v(x)-v(y))^2 at random
    node pairs of random positive fields, gamma = ((1-t)u^2 + t v^2)^{1/2}.
    """
    params = {"seed": seed, "slack": slack}

    def work(rng, m):
        ms = m // 2
        mf = m - ms
        scale = _log_uniform(rng, 1e-3, 1e3, ms)
        a, b, c, d = (rng.standard_normal(ms) * scale for _ in range(4))
        # plant exact parallel and equal configurations
        k = ms // 8
        lam = rng.uniform(0.1, 10.0, k)
        b[:k], d[:k] = lam * a[:k], lam * c[:k]
        a[k:2 * k], c[k:2 * k] = b[k:2 * k], d[k:2 * k]
        m1 = _scalar_fractional_margin(a, b, c, d)
        us = [fields.positive_field(rng, (FIELD_NODES,)) for _ in range(FIELDS_PER_CHUNK)]
        vs = [fields.positive_field(rng, (FIELD_NODES,)) for _ in range(FIELDS_PER_CHUNK)]
        U, V = np.stack(us), np.stack(vs)
        f = rng.integers(0, FIELDS_PER_CHUNK, mf)
        x = rng.integers(0, FIELD_NODES, mf)
        y = rng.integers(0, FIELD_NODES, mf)
        t = rng.uniform(0.0, 1.0, mf)
        ux, uy, vx, vy = U[f, x], U[f, y], V[f, x], V[f, y]
        gx = np.sqrt((1 - t) * ux * ux + t * vx * vx)
        gy = np.sqrt((1 - t) * uy * uy + t * vy * vy)
        lhs = (gx - gy) ** 2
        rhs = (1 - t) * (ux - uy) ** 2 + t * (vx - vy) ** 2
        m2 = (rhs - lhs) / np.maximum(1.0, rhs)
        margin = np.concatenate([m1, m2])
        pad = np.full(mf, np.nan)
        inputs = {"a": np.concatenate([a, pad]), "b": np.concatenate([b, pad]),
                  "c": np.concatenate([c, pad]), "d": np.concatenate([d, pad]),
                  "t": np.concatenate([np.full(ms, np.nan), t]),
                  "u_pair": np.concatenate([np.full((ms, 2), np.nan), np.stack([ux, uy], 1)]),
                  "v_pair": np.concatenate([np.full((ms, 2), np.nan), np.stack([vx, vy], 1)])}
        rep = _chunk_report("check_fractional_pointwise", params, margin, inputs, slack)
        rep.details = {"equalities": int(np.sum(np.abs(m1[:2 * k]) <= EQUALITY_TOL)),
                       "planted_equalities": 2 * k}
        return rep

    return _run_chunks(trials, seed, work, "check_fractional_pointwise", params)


# ---------------------------------------------------------------------------
# operator Minkowski inequality
# ---------------------------------------------------------------------------

def _sine_calibration(grid: Grid) -> float:
    """Relative sup error of K_h on a sine mode with known continuum image."""
    from .grid import _poisson_array

    a, b = grid.domain.bounds
    L = b - a
    phi = np.sin(np.pi * (grid.x - a) / L)
    G = (np.pi / L) ** 2 * phi
    KG = _poisson_array(grid, grid.apply_bc(G))
    return float(np.max(np.abs(KG - phi)) / np.max(np.abs(phi)))


def _random_nonnegative(rng, grid: Grid) -> np.ndarray:
    g = fields.positive_field(rng, grid.shape)
    if rng.uniform() < 0.5:
        lo, hi = np.sort(rng.integers(0, grid.n, 2))
        mask = np.zeros(grid.n, bool)
        mask[lo:hi + 1] = True
        g = np.where(mask, g, 0.0)
    return grid.apply_bc(g)


def check_operator_minkowski(beta: float, trials: int = 1000, grid: Grid | None = None,
                             seed: int = 0) -> IneqReport:
    """Nodewise ((KG1)^b + (KG2)^b)^{1/b} <= K((G1^b + G2^b)^{1/b}).

    Margins are (RHS - LHS) / max RHS.  The tolerated slack tol_K is the
    relative error of the discrete inverse Laplacian on the lowest sine
    mode, which scales like h^2.
    """
    from .grid import _poisson_array

    if not beta > 1:
        raise ValueError(f"beta must exceed 1, got {beta}")
    if grid is None:
        grid = make_grid(Domain.interval(0.0, 1.0), 129)
    if grid.kind != "interval" or not grid.domain.dirichlet:
        raise GridError("operator Minkowski check needs a dirichlet-zero interval grid")
    tol_K = _sine_calibration(grid)
    interior = grid.interior_mask
    params = {"beta": beta, "n": grid.n, "domain": grid.domain.to_dict(), "seed": seed}

    def work(rng, m):
        margins, G1s, G2s = [], [], []
        for _ in range(m):
            G1, G2 = _random_nonnegative(rng, grid), _random_nonnegative(rng, grid)
            K1, K2 = _poisson_array(grid, G1), _poisson_array(grid, G2)
            lhs = (np.maximum(K1, 0) ** beta + np.maximum(K2, 0) ** beta) ** (1 / beta)
            rhs = _poisson_array(grid, (G1 ** beta + G2 ** beta) ** (1 / beta))
            scale = max(float(np.max(rhs)), np.finfo(float).tiny)
            mg = (rhs - lhs)[interior] / scale
            margins.append(float(mg.min()))
            G1s.append(G1)
            G2s.append(G2)
        margin = np.array(margins)
        rep = _chunk_report("check_operator_minkowski", params, margin,
                            {"G1": np.array(G1s), "G2": np.array(G2s)}, tol_K)
        return rep

    rep = _run_chunks(trials, seed, work, "check_operator_minkowski", params)
    rep.details = {"tol_K": tol_K, "h": grid.h}
    return rep


def minkowski_refinement(beta: float, trials: int = 1000, n: int = 129,
                         seed: int = 0, domain: Domain | None = None) -> dict[str, Any]:
    """Run the operator check at n and 2n-1 and report how the slack shrinks."""
    domain = domain or Domain.interval(0.0, 1.0)
    coarse = check_operator_minkowski(beta, trials, make_grid(domain, n), seed)
    fine = check_operator_minkowski(beta, trials, make_grid(domain, 2 * n - 1), seed)
    t0, t1 = coarse.details["tol_K"], fine.details["tol_K"]
    return {"coarse": coarse, "fine": fine, "shrink": t0 / t1, "order": math.log2(t0 / t1)}


# ---------------------------------------------------------------------------
# power means
# ---------------------------------------------------------------------------

def _power_mean_log(m, t, q):
    """log of ((1-t) m^q + t)^{1/q}, with the geometric mean at q = 0."""
    lm = np.log(m)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.logaddexp(np.log1p(-t) + q * lm, np.log(t)) / q
    return np.where(q == 0, (1 - t) * lm, val)


def scalar_q_monotone(m: float, t: float, q1: float, q2: float) -> tuple[float, float]:
    """Values of q -> ((1-t) m^q + t)^{1/q} at q1 < q2 (a weighted power mean of m and 1)."""
    if not m > 0:
        raise ValueError("m must be positive")
    if m == 1:
        raise ValueError("m = 1 gives a constant map")
    if not 0 < t < 1:
        raise ValueError("t must lie in (0,1)")
    if not q1 < q2:
        raise ValueError("need q1 < q2")
    v = np.exp(_power_mean_log(m, t, np.array([q1, q2], float)))
    return float(v[0]), float(v[1])


def check_q_monotone(trials: int = 100_000, seed: int = 0, slack: float = SLACK) -> IneqReport:
    params = {"seed": seed, "slack": slack}

    def work(rng, n):
        m = _log_uniform(rng, 1e-3, 1e3, n)
        t = rng.uniform(1e-6, 1 - 1e-6, n)
        q = np.sort(rng.uniform(0.05, 8.0, (n, 2)), axis=1)
        lo = np.exp(_power_mean_log(m, t, q[:, 0]))
        hi = np.exp(_power_mean_log(m, t, q[:, 1]))
        margin = (hi - lo) / np.maximum(1.0, hi)
        return _chunk_report("check_q_monotone", params, margin,
                             {"m": m, "t": t, "q1": q[:, 0], "q2": q[:, 1]}, slack)

    return _run_chunks(trials, seed, work, "check_q_monotone", params)


# ---------------------------------------------------------------------------
# Hamiltonian system path map
# ---------------------------------------------------------------------------

@dataclass
class SystemConcavityReport:
    report: IneqReport
    verdict: str               # strict | non_strict | violated
    probe_worst: float
    random_worst: float
    equalities: int

    def to_dict(self) -> dict:
        return {**self.report.to_dict(), "verdict": self.verdict,
                "probe_worst": self.probe_worst, "random_worst": self.random_worst,
                "equalities": self.equalities}


PROBE_EPS = (1e-1, 1e-2, 1e-3)
PROBE_T = (1e-1, 1e-2, 1e-3)
RANDOM_T = np.arange(1, 8) / 8.0


def check_system_concavity(p: float, q: float, trials: int = 200, grid: Grid | None = None,
                           seed: int = 0) -> SystemConcavityReport:
    """Pointwise concavity of t -> F(t) K(G(t)) against its chord.

    F and G are power interpolants with exponents (p+1)/p and (q+1)/q.
    The directed probe f1 = eps f2, g1 = eps g2 runs first; random positive
    tuples follow.  Margins are (h(t) - chord(t)) / chord(t).
    """
    from .grid import _poisson_array

    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    if grid is None:
        grid = make_grid(Domain.interval(0.0, 1.0), 129)
    interior = grid.interior_mask
    a, b = (p + 1) / p, (q + 1) / q
    K = lambda g: _poisson_array(grid, g)  # noqa: E731

    def interp(x1, x2, t, e):
        return ((1 - t) * x1 ** e + t * x2 ** e) ** (1 / e)

    def margins(f1, g1, f2, g2, ts):
        Kg1, Kg2 = K(g1), K(g2)
        out = []
        for t in ts:
            h = interp(f1, f2, t, a) * K(interp(g1, g2, t, b))
            chord = (1 - t) * f1 * Kg1 + t * f2 * Kg2
            out.append((h[interior] - chord[interior]) / chord[interior])
        return np.array(out)

    params = {"p": p, "q": q, "n": grid.n, "seed": seed}
    rng_probe, rng_rand = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    f2 = grid.apply_bc(fields.positive_field(rng_probe, grid.shape))
    g2 = grid.apply_bc(fields.positive_field(rng_probe, grid.shape))
    probe_worst, probe_witness, probe_bad, eqs = math.inf, None, 0, 0
    # "eps": f1 = eps f2, g1 = eps g2.  "holder": f1 = eps^{b/a} f2, g1 = eps g2,
    # the tuples that make every step of the Holder-Minkowski chain tight.
    for probe, kappa in (("eps", 1.0), ("holder", b / a)):
        for eps in PROBE_EPS:
            mg = margins(eps ** kappa * f2, eps * g2, f2, g2, PROBE_T)
            eqs += int(np.sum(np.abs(mg) <= EQUALITY_TOL))
            probe_bad += int(np.sum(mg < -SLACK))
            k = np.unravel_index(int(np.argmin(mg)), mg.shape)
            if mg[k] < probe_worst:
                probe_worst = float(mg[k])
                probe_witness = {"probe": probe, "eps": eps, "t": PROBE_T[k[0]],
                                 "node": int(np.flatnonzero(interior)[k[1]]),
                                 "margin": probe_worst}

    rep = IneqReport("check_system_concavity", params, 2 * len(PROBE_EPS) * len(PROBE_T),
                     probe_bad, probe_worst, probe_witness if probe_bad else None)
    random_worst = math.inf
    for _ in range(trials):
        f1, g1, f2r, g2r = (grid.apply_bc(fields.positive_field(rng_rand, grid.shape))
                            for _ in range(4))
        mg = margins(f1, g1, f2r, g2r, RANDOM_T)
        worst = float(mg.min())
        random_worst = min(random_worst, worst)
        eqs += int(np.sum(np.abs(mg) <= EQUALITY_TOL))
        bad = int(worst < -SLACK)
        wit = None
        if bad:
            k = np.unravel_index(int(np.argmin(mg)), mg.shape)
            wit = {"probe": "random", "t": float(RANDOM_T[k[0]]),
                   "node": int(np.flatnonzero(interior)[k[1]]), "margin": worst}
        rep = rep.merge(IneqReport(rep.name, params, 1, bad, worst, wit))
    if rep.violations:
        verdict = "violated"
    elif eqs:
        verdict = "non_strict"
    else:
        verdict = "strict"
    return SystemConcavityReport(rep, verdict, probe_worst, random_worst, eqs)


# ---------------------------------------------------------------------------
# dual transform bounds
# ---------------------------------------------------------------------------

def check_f_properties(samples: int = 10_000, slack: float = SLACK) -> IneqReport:
    """Band f/2 <= t/sqrt(1+2f^2) <= f on a log sweep of [1e-6, 1e6] plus
    the two asymptotic regimes of f."""
    t = np.geomspace(1e-6, 1e6, samples)
    f = dual.f(t)
    mid = t / np.sqrt(1.0 + 2.0 * f * f)
    margin = np.minimum(mid - 0.5 * f, f - mid) / f
    rep = _chunk_report("check_f_properties", {"samples": samples, "slack": slack},
                        margin, {"t": t}, slack)
    big = dual.f(1e6) / 1e3
    small = dual.f(1e-4) / 1e-4
    rep.details = {"f_ratio_large": big, "f_ratio_large_target": 2 ** 0.25,
                   "f_ratio_small": small, "f_zero": float(dual.f(0.0))}
    if abs(big - 2 ** 0.25) > 1e-3:
        rep.violations += 1
        rep.witness = {"t": 1e6, "margin": -abs(big - 2 ** 0.25)}
    if not 1 - 1e-6 <= small <= 1:
        rep.violations += 1
        rep.witness = {"t": 1e-4, "margin": -abs(small - 1)}
    return rep


# ---------------------------------------------------------------------------
# Gross-Pitaevskii energy identity
# ---------------------------------------------------------------------------

@dataclass
class GPIdentity:
    gap: float
    F: float
    residual: float
    scale: float
    mass_gap: float
    comparable: bool
    tol: float

    @property
    def passed(self) -> bool:
        return (self.comparable and self.residual <= self.tol * self.scale
                and self.F >= -self.tol * self.scale)

    def to_dict(self) -> dict:
        return {"gap": self.gap, "F": self.F, "residual": self.residual, "scale": self.scale,
                "mass_gap": self.mass_gap, "comparable": self.comparable, "passed": self.passed}


def _weighted_quotient_sq(grid: Grid, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-cell analogue of |grad w|^2 v^2 with w = u/v.

    On every edge (a, b) the term is v_a v_b (w_b - w_a)^2 / h^2, written as
    (u_b v_a - u_a v_b)^2 / (v_a v_b h^2) and set to 0 when an end has v = 0.
    This makes the discrete identity exact edge by edge.
    """
    def edge(axis, h):
        ua, ub = np.delete(u, -1, axis), np.delete(u, 0, axis)
        va, vb = np.delete(v, -1, axis), np.delete(v, 0, axis)
        den = va * vb
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.where(den > 0, (ub * va - ua * vb) ** 2 / np.where(den > 0, den, 1.0), 0.0)
        return e / (h * h)

    if grid.ndim == 1:
        return edge(0, grid.h)
    hx, hy = grid.spacings
    ex, ey = edge(0, hx), edge(1, hy)
    return 0.5 * (ex[:, :-1] + ex[:, 1:]) + 0.5 * (ey[:-1, :] + ey[1:, :])


def gp_energy_identity(spec: ProblemSpec, u: State, v: State, tol: float = 1e-4) -> GPIdentity:
    """E(u) = E(v) + F(u/v) for two equal-mass critical points of the
    fixed-mass Gross-Pitaevskii energy."""
    model = spec.model
    if spec.family != "gross_pitaevskii" or getattr(model, "mode", None) != "fixed_mass":
        raise SpecError("gp_energy_identity needs a fixed_mass gross_pitaevskii spec")
    if not (u.grid is v.grid or u.grid == v.grid):
        raise SpecError("both states must live on one grid")
    grid = u.grid
    if grid != spec.grid:
        # states from a truncation re-run carry an enlarged radial grid
        model = ProblemSpec(spec.family, dict(spec.params), grid).model
    U, V = u.arrays, v.arrays
    interior = grid.interior_mask
    if any(np.any(x[interior] <= 0) for x in U + V):
        raise SpecError("both states must be positive on the interior")
    Eu, Ev = model.energy(U), model.energy(V)
    w = grid.node_weights
    mass_gap = max(abs(math.fsum(np.ravel(w * (a * a - b * b)))) for a, b in zip(U, V))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ratios = [a[interior] / b[interior] for a, b in zip(U, V)]
    comparable = all(np.all(np.isfinite(r)) and r.max() < 1e150 for r in ratios)
    cw = grid.cell_weights
    terms = [0.5 * cw * _weighted_quotient_sq(grid, a, b) for a, b in zip(U, V)]
    d = np.stack([a * a - b * b for a, b in zip(U, V)])
    terms.append(0.25 * w * np.einsum("i...,ij,j...->...", d, model.B, d))
    F = math.fsum(np.concatenate([np.ravel(x) for x in terms]))
    gap = Eu - Ev
    scale = max(abs(Eu), abs(Ev), np.finfo(float).tiny)
    return GPIdentity(gap, F, abs(gap - F), scale, mass_gap, bool(comparable), tol)
