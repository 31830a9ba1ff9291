import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varipath import inequalities as ineq
from varipath.grid import Domain, GridFunction, make_grid, poisson_solve
from varipath.paths import Generator, PathSpec, path_eval
from varipath.problems import ProblemSpec, SpecError, State
from varipath.scalarfn import ScalarFn
from varipath.solvers import multistart

P2 = ScalarFn.power(2.0)


# -- concavity lemma -----------------------------------------------------------

def test_gin_spot_value():
    lhs, rhs = ineq.gin_value(P2, P2, 1.0, 2.0, (1.0, 0.0), (0.0, 2.0), 0.5)
    assert lhs == pytest.approx(1.7, rel=1e-14)
    assert rhs == pytest.approx(2.5, rel=1e-14)


@pytest.mark.parametrize("Q,M", [(ScalarFn.power(p), ScalarFn.power(p)) for p in (1.2, 2.0, 3.0)]
                         + [(ScalarFn("f_squared"), P2)], ids=["p1.2", "p2", "p3", "f2"])
def test_gin_no_violations(Q, M):
    rep = ineq.check_gin(Q, M, 10_000, seed=1)
    assert rep.passed and rep.trials == 10_000 and rep.witness is None
    assert rep.worst_margin >= -1e-12


@given(st.integers(0, 2 ** 31), st.floats(0.05, 0.95), st.sampled_from([1.2, 2.0, 3.0]))
def test_gin_against_finite_difference_path(seed, t, p):
    # independent route: build gamma(t) on a fine grid and differentiate numerically
    g = make_grid(Domain.interval(0, 1, "natural"), 4001)
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.2, 0.9, 4)
    u = 1.0 + c[0] * np.sin(3 * g.x + c[1])
    v = 1.0 + c[2] * np.cos(2 * g.x + c[3]) ** 2
    gam = path_eval(PathSpec((Generator("power", p),), State.from_arrays(g, [u]),
                             State.from_arrays(g, [v])), t).arrays[0]
    i = 2000
    d = lambda a: (a[i + 1] - a[i - 1]) / (2 * g.h)
    Q = ScalarFn.power(p)
    lhs, rhs = ineq.gin_value(Q, Q, u[i], v[i], (d(u), 0.0), (d(v), 0.0), t)
    # compare |gamma'| itself: the central difference error is O(h^2) absolute
    assert abs(lhs ** (1 / p) - abs(d(gam))) <= 1e-5 * (1 + abs(d(u)) + abs(d(v)))
    assert abs(d(gam)) ** p <= (1 - t) * abs(d(u)) ** p + t * abs(d(v)) ** p + 1e-9


def test_gin_deterministic_and_merge():
    a = ineq.check_gin(P2, P2, 5000, seed=3)
    b = ineq.check_gin(P2, P2, 5000, seed=3)
    assert a.to_dict() == b.to_dict()
    m = a.merge(b)
    assert m.trials == 10_000 and m.worst_margin == a.worst_margin


def test_gin_detects_non_concave_density():
    # M = power(0.5) is not convex along power(2) paths everywhere
    rep = ineq.check_gin(P2, ScalarFn.power(0.5), 20_000, seed=0)
    assert not rep.passed and rep.witness is not None
    assert rep.witness["margin"] == rep.worst_margin < -ineq.SLACK


# -- Hessian criterion ---------------------------------------------------------

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_hessian_power_rank_one(p):
    h = ineq.hessian_criterion(ScalarFn.power(p), ScalarFn.power(p), {"z1": (0.1, 10.0), "z2": (0.1, 10.0)})
    assert np.max(np.abs(h.relative_det)) <= 1e-13
    assert h.certified


def test_hessian_curvature_band():
    p = 1.5
    Q, M = ScalarFn.power(p), ScalarFn("area_plus")
    band = {"z1": (0.1, 10.0), "z2": (1.0, 1 / math.sqrt(p - 1))}
    h = ineq.hessian_criterion(Q, M, band)
    assert band["z2"][1] == pytest.approx(1.41421, abs=1e-5)
    assert math.sqrt((2 - p) / (p - 1)) == 1.0
    # closed form of the factor product: (1/(p-1)) (1/z2^2)
    np.testing.assert_allclose(h.product, (1 / (p - 1)) / h.z2[None, :] ** 2 * np.ones_like(h.product),
                               rtol=1e-10)
    assert h.certified and h.product.min() > 1
    assert not ineq.hessian_criterion(Q, M, {"z1": (0.1, 10.0), "z2": (1.0, 2.0)}).certified


# -- fractional pointwise ------------------------------------------------------

def test_fractional_pointwise():
    rep = ineq.check_fractional_pointwise(100_000, seed=2)
    assert rep.passed and rep.worst_margin >= -1e-12
    assert rep.details["planted_equalities"] > 0
    assert rep.details["equalities"] >= rep.details["planted_equalities"]


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_fractional_scalar_reductions(a, c, d):
    lhs = abs(math.hypot(a, c) - math.hypot(a, d))
    assert lhs <= abs(c - d) * (1 + 1e-15) + 1e-12
    assert abs(math.hypot(a, c) - math.hypot(a, c)) == 0.0


# -- operator Minkowski --------------------------------------------------------

def _dense_K(grid):
    n = grid.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(poisson_solve(GridFunction(grid, e)).values)
    return np.array(cols).T


def test_discrete_K_is_nonnegative_and_minkowski_exact():
    g = make_grid(Domain.interval(0, 1), 33)
    K = _dense_K(g)
    assert np.all(K >= -1e-15)
    rng = np.random.default_rng(0)
    for beta in (1.5, 2.0, 3.0):
        for _ in range(50):
            G1, G2 = g.apply_bc(rng.random(33)), g.apply_bc(rng.random(33))
            lhs = ((K @ G1) ** beta + (K @ G2) ** beta) ** (1 / beta)
            rhs = K @ (G1 ** beta + G2 ** beta) ** (1 / beta)
            assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-15)


def test_minkowski_degenerate_equalities():
    g = make_grid(Domain.interval(0, 1), 129)
    G = g.apply_bc(1 + np.sin(3 * g.x))
    K = lambda a: poisson_solve(GridFunction(g, a)).values
    for beta in (1.5, 3.0):
        np.testing.assert_allclose((K(G) ** beta) ** (1 / beta), K((G ** beta) ** (1 / beta)), rtol=1e-13)
        np.testing.assert_allclose(2 ** (1 / beta) * K(G), K((2 * G ** beta) ** (1 / beta)), rtol=1e-13)


def test_operator_minkowski_refinement():
    r = ineq.minkowski_refinement(2.0, trials=100, n=129, seed=0)
    assert r["coarse"].passed and r["fine"].passed
    assert r["shrink"] >= 3.0 and r["order"] >= 1.8
    assert r["coarse"].details["tol_K"] == pytest.approx(5.02e-5, rel=0.01)


def test_operator_minkowski_rejects_beta():
    with pytest.raises(ValueError):
        ineq.check_operator_minkowski(1.0, 10)


# -- power means ---------------------------------------------------------------

def test_scalar_q_monotone_values():
    v1, v2 = ineq.scalar_q_monotone(2.0, 0.5, 1.0, 2.0)
    assert v1 == pytest.approx(1.5, rel=1e-15)
    assert v2 == pytest.approx(math.sqrt(2.5), rel=1e-15)
    a, b = ineq.scalar_q_monotone(1 + 1e-9, 0.3, 0.5, 4.0)
    assert a == pytest.approx(1.0, abs=1e-8) and b == pytest.approx(1.0, abs=1e-8)
    for bad in ((1.0, 0.5, 1, 2), (2.0, 0.0, 1, 2), (2.0, 0.5, 2, 1), (-1.0, 0.5, 1, 2)):
        with pytest.raises(ValueError):
            ineq.scalar_q_monotone(*bad)


@given(st.floats(1e-3, 1e3), st.floats(0.01, 0.99), st.floats(0.05, 4.0), st.floats(0.01, 4.0))
def test_power_mean_monotone_property(m, t, q1, dq):
    if abs(m - 1) < 1e-6:
        return
    v1, v2 = ineq.scalar_q_monotone(m, t, q1, q1 + dq)
    # direct evaluation as an independent route
    direct = ((1 - t) * m ** q1 + t) ** (1 / q1)
    assert v1 == pytest.approx(direct, rel=1e-9)
    assert v1 <= v2 * (1 + 1e-12)


def test_check_q_monotone():
    assert ineq.check_q_monotone(20_000, seed=0).passed


# -- Hamiltonian system concavity ---------------------------------------------

G129 = make_grid(Domain.interval(0, 1), 129)


@pytest.mark.parametrize("p,q", [(0.5, 0.5), (0.3, 2.0), (2.0, 0.3), (0.9, 0.9)])
def test_system_strict(p, q):
    rep = ineq.check_system_concavity(p, q, 50, G129, seed=0)
    assert rep.verdict == "strict" and rep.report.passed


@pytest.mark.parametrize("p,q", [(1.0, 1.0), (2.0, 0.5)])
def test_system_boundary(p, q):
    rep = ineq.check_system_concavity(p, q, 50, G129, seed=0)
    assert rep.verdict == "non_strict" and rep.equalities > 0


def test_system_violation_witness():
    rep = ineq.check_system_concavity(1.5, 1.5, 50, G129, seed=0)
    assert rep.verdict == "violated"
    assert rep.probe_worst < -ineq.SLACK
    assert rep.report.witness is not None


# -- dual transform band ----------------------------------------------------------

def test_f_properties():
    rep = ineq.check_f_properties(10_000)
    assert rep.passed


# -- Gross-Pitaevskii identity -------------------------------------------------

R = make_grid(Domain.radial(2, 8.0), 257)


def test_gp_identity_trivial_and_errors():
    spec = ProblemSpec("gross_pitaevskii", {"k": 1, "B": [[0.0]], "mode": "fixed_mass"}, R)
    u = State.from_arrays(R, [np.exp(-R.x ** 2 / 2)])
    r = ineq.gp_energy_identity(spec, u, u)
    assert r.gap == 0.0 and r.F == 0.0 and r.passed
    with pytest.raises(SpecError):
        ineq.gp_energy_identity(ProblemSpec("gross_pitaevskii", {"k": 1, "B": [[0.0]], "mode": "fixed_omega",
                                                                 "omega": [2.0]}, R), u, u)


def test_gp_identity_on_solver_pairs():
    spec = ProblemSpec("gross_pitaevskii", {"k": 2, "B": [[1, .2], [.2, 1]], "mode": "fixed_mass"}, R)
    ms = multistart(spec, 3, 5, check_pairs=False)
    states = [ms.reports[i].state for i in ms.accepted]
    assert len(states) >= 2
    r = ineq.gp_energy_identity(spec, states[0], states[1])
    assert r.passed and r.residual <= 1e-4 * r.scale


def test_gp_identity_exact_for_discrete_pairs():
    # with v a discrete critical point the identity holds for any positive u of equal mass
    spec = ProblemSpec("gross_pitaevskii", {"k": 1, "B": [[1.0]], "mode": "fixed_mass"}, R)
    ms = multistart(spec, 2, 0, check_pairs=False)
    v = ms.reports[ms.accepted[0]].state
    u = v.arrays[0] * (1 + 0.3 * np.exp(-R.x ** 2))
    u = u / math.sqrt(spec.model.constraint([u])[0])
    r = ineq.gp_energy_identity(spec, State.from_arrays(R, [u]), v)
    assert r.residual <= 1e-6 * r.scale and r.F > 0
