"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line, printed in
the terminal summary (and to stdout when run as a script)."""

import itertools
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from varipath import inequalities as ineq
from varipath.decay import tail_fit
from varipath.experiments import toy_spec
from varipath.grid import Domain, make_grid
from varipath.paths import Generator, PathSpec, convexity_profile, lipschitz_probe
from varipath.problems import ProblemSpec, State
from varipath.scalarfn import ScalarFn
from varipath.solvers import (fractional_eigenvalue, lambda_V_estimate, multistart, random_start,
                              relative_sup_distance, shooting_oracle, solve)

ROOT = Path(__file__).resolve().parents[1]

# tolerances and budgets, as stated in the criteria
SLACK = 1e-10                 # 1: zero violations at slack -1e-10
ORACLE_BUDGET = 30.0          # 1: seconds
MINK_SHRINK = 3.0             # 2: worst slack shrinks by >= 3 at n=257
MINK_BUDGET = 60.0            # 2
REGIME_BUDGET = 60.0          # 3
EIG_REL = 2e-3                # 4: lambda within 0.2%
GAUSS_SUP = 1e-3              # 4: relative sup-norm
OMEGA_ABS = 1e-3              # 4
ORACLE_SUP = 1e-4             # 5: relative sup-norm
SOLVE_BUDGET = 10.0           # 5: seconds per solve
SWEEP_BUDGET = 15 * 60.0      # 6
GAP_REL = 1e-6                # 7: energy and flatness gaps, relative to scale
RHO_TOL = 0.15                # 9
RATIO_MAX = 3.0               # 9
IDENTITY_REL = 1e-4           # 9


def record(log, number, ok, detail):
    log.append((number, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


# -- 1 ------------------------------------------------------------------------

def test_criterion_01_inequality_oracles(acceptance_log):
    t0 = time.perf_counter()
    reports = [ineq.check_gin(ScalarFn.power(p), ScalarFn.power(p), 100_000, seed=1, slack=SLACK)
               for p in (1.2, 2.0, 3.0)]
    reports.append(ineq.check_gin(ScalarFn("f_squared"), ScalarFn.power(2.0), 100_000, seed=1, slack=SLACK))
    reports.append(ineq.check_fractional_pointwise(1_000_000, seed=1))
    reports.append(ineq.check_q_monotone(100_000, seed=1, slack=SLACK))
    v1, v2 = ineq.scalar_q_monotone(2.0, 0.5, 1.0, 2.0)
    elapsed = time.perf_counter() - t0
    violations = sum(r.violations for r in reports)
    worst = min(r.worst_margin for r in reports)
    ok = (violations == 0 and worst >= -SLACK and v1 < v2 and elapsed <= ORACLE_BUDGET
          and all(1e4 <= r.trials <= 1e6 for r in reports))
    record(acceptance_log, 1, ok,
           f"{len(reports)} oracles, {sum(r.trials for r in reports)} trials, {violations} violations, "
           f"worst margin {worst:.3g}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------

def test_criterion_02_operator_minkowski(acceptance_log):
    t0 = time.perf_counter()
    parts, ok = [], True
    for beta in (1.5, 2.0, 3.0):
        r = ineq.minkowski_refinement(beta, trials=1000, n=129, seed=0)
        ok &= r["coarse"].passed and r["fine"].passed and r["shrink"] >= MINK_SHRINK
        ok &= r["coarse"].trials == 1000
        parts.append(f"beta={beta}: viol {r['coarse'].violations}+{r['fine'].violations} "
                     f"shrink {r['shrink']:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= MINK_BUDGET
    record(acceptance_log, 2, ok, "; ".join(parts) + f"; {elapsed:.1f}s")


# -- 3 ------------------------------------------------------------------------

def test_criterion_03_regime_map(acceptance_log):
    t0 = time.perf_counter()
    grid = make_grid(Domain.interval(0, 1), 129)
    cases = {(0.5, 0.5): "strict", (0.3, 2.0): "strict", (2.0, 0.3): "strict", (0.9, 0.9): "strict",
             (1.0, 1.0): "non_strict", (2.0, 0.5): "non_strict", (1.5, 1.5): "violated"}
    got = {pq: ineq.check_system_concavity(*pq, trials=200, grid=grid, seed=0) for pq in cases}
    elapsed = time.perf_counter() - t0
    ok = all(got[pq].verdict == v for pq, v in cases.items()) and elapsed <= REGIME_BUDGET
    ok &= got[(1.5, 1.5)].report.witness is not None
    detail = ", ".join(f"{p}x{q}:{got[(p, q)].verdict}" for p, q in cases) + f"; {elapsed:.1f}s"
    record(acceptance_log, 3, ok, detail)


# -- 4 ------------------------------------------------------------------------

def test_criterion_04_closed_form_anchors(acceptance_log):
    lam = lambda_V_estimate(ScalarFn.constant(0.0), make_grid(Domain.interval(0, 1), 513))
    lam_err = abs(lam / math.pi ** 2 - 1)
    g = make_grid(Domain.radial(2, 8.0), 513)
    spec = ProblemSpec("gross_pitaevskii", {"k": 1, "B": [[0.0]], "mode": "fixed_mass", "V": "trap"}, g)
    rep = solve(spec, random_start(spec, np.random.default_rng(0)))
    u = rep.state.arrays[0]
    gauss = np.exp(-g.x ** 2 / 2)
    gauss *= np.max(u) / np.max(gauss)
    sup = float(np.max(np.abs(u - gauss)) / np.max(gauss))
    om_err = abs(rep.multipliers[0] - 2.0)
    ok = lam_err <= EIG_REL and rep.converged and sup <= GAUSS_SUP and om_err <= OMEGA_ABS
    record(acceptance_log, 4, ok, f"lambda rel err {lam_err:.2e}; GP Gaussian rel sup {sup:.2e}, "
                                  f"|omega-2| {om_err:.2e}")


# -- 5 ------------------------------------------------------------------------

def test_criterion_05_oracle_equivalence(acceptance_log):
    g = make_grid(Domain.interval(0, 1), 257)
    specs = {
        "ex4.4": ProblemSpec("generalized_plap", {"p": 2, "g": ScalarFn.from_dict({"kind": "power", "q": 1.5})}, g),
        "allen_cahn": ProblemSpec("allen_cahn", {"p": 2, "q": 4, "k": 2 * math.pi ** 2}, g),
        "eigen": ProblemSpec("p_eigenvalue", {"p": 2, "Lambda": 0.0}, g),
    }
    parts, ok = [], True
    for name, spec in specs.items():
        t0 = time.perf_counter()
        rep = solve(spec, random_start(spec, np.random.default_rng(0)))
        dt = time.perf_counter() - t0
        dist = relative_sup_distance(rep.state, shooting_oracle(spec))
        ok &= rep.converged and dist <= ORACLE_SUP and dt <= SOLVE_BUDGET
        parts.append(f"{name}: dist {dist:.2e}, solve {dt:.2f}s")
    record(acceptance_log, 5, ok, "; ".join(parts))


# -- 6 and 7 --------------------------------------------------------------------

def sweep_specs():
    gi = make_grid(Domain.interval(0, 1), 257)
    gn = make_grid(Domain.interval(0, 1, "natural"), 257)
    gf = make_grid(Domain.interval(-1, 1), 257)
    gr = make_grid(Domain.radial(2, 8.0), 513)
    k_frac = 2 * fractional_eigenvalue(gf, 0.5)
    B = [[1.0, 0.2], [0.2, 1.0]]
    S = ScalarFn
    return {
        "plap p=1.5": ProblemSpec("generalized_plap", {"p": 1.5, "g": S.power(0.25)}, gi),
        "plap p=2": ProblemSpec("generalized_plap", {"p": 2, "g": S.power(0.5)}, gi),
        "plap p=3": ProblemSpec("generalized_plap", {"p": 3, "g": S.power(1.0)}, gi),
        "allen_cahn": ProblemSpec("allen_cahn", {"p": 2, "q": 4, "k": 2 * math.pi ** 2}, gi),
        "nonlinear_boundary": ProblemSpec("nonlinear_boundary", {"p": 2, "q": 1.5}, gn),
        "euclid": ProblemSpec("mean_curvature_euclid", {"g": S.power(0.5)}, gi),
        "minkowski": ProblemSpec("mean_curvature_minkowski", {"g": S.power(0.5), "theta": 0.25}, gi),
        "fractional": ProblemSpec("fractional", {"s": 0.5, "g": S.allen_cahn(k_frac, 2, 4)}, gf),
        "hamiltonian": ProblemSpec("hamiltonian_dual", {"p": 0.5, "q": 0.5}, gi),
        "schrodinger bounded": ProblemSpec("schrodinger_dual", {"mode": "fixed_omega", "omega": 20.0,
                                                                "V": S.constant(0.0)}, gi),
        "schrodinger trap": ProblemSpec("schrodinger_dual", {"mode": "fixed_omega", "omega": 3.0,
                                                             "V": "trap"}, gr),
        "gp fixed_omega": ProblemSpec("gross_pitaevskii", {"k": 2, "B": B, "mode": "fixed_omega",
                                                           "omega": [3.0, 3.0], "V": "trap"}, gr),
        "gp fixed_mass": ProblemSpec("gross_pitaevskii", {"k": 2, "B": B, "mode": "fixed_mass", "V": "trap"}, gr),
    }


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    out = {name: multistart(spec, 16, 2024) for name, spec in sweep_specs().items()}
    return out, time.perf_counter() - t0


def test_criterion_06_multistart_uniqueness(acceptance_log, sweep):
    reports, elapsed = sweep
    bad = [f"{n}={r.n_clusters}" for n, r in reports.items() if r.n_clusters != 1]
    accepted = sum(len(r.accepted) for r in reports.values())
    ok = not bad and elapsed <= SWEEP_BUDGET
    record(acceptance_log, 6, ok, f"{len(reports)} problems, 1 cluster each"
           + (f" except {bad}" if bad else "") + f"; {accepted}/{16 * len(reports)} starts accepted; "
           f"{elapsed:.0f}s")


def test_criterion_07_pairwise_conclusions(acceptance_log, sweep):
    reports, _ = sweep
    checks = [c for r in reports.values() for c in r.pair_checks]
    expected = sum(math.comb(len(r.accepted), 2) for r in reports.values())
    failed = [c for c in checks if not (c.energy_gap <= GAP_REL * c.scale
                                        and c.profile.flatness_gap <= GAP_REL * c.scale
                                        and c.lipschitz and c.profile.convex)]
    worst_e = max(c.energy_gap / c.scale for c in checks)
    worst_f = max(c.profile.flatness_gap / c.scale for c in checks)
    ok = len(checks) == expected and not failed
    record(acceptance_log, 7, ok, f"{len(checks) - len(failed)}/{len(checks)} pairs pass; max energy gap "
                                  f"{worst_e:.2e}, max flatness gap {worst_f:.2e} (relative)")


# -- 8 ------------------------------------------------------------------------

def test_criterion_08_counterexample(acceptance_log):
    spec = toy_spec()
    I = spec.model.I
    u, v = State.from_arrays(None, [[-1.0]]), State.from_arrays(None, [[1.0]])
    path = PathSpec((Generator.from_dict(spec.model.generator()[0]),), u, v, require_positive=False)
    prof = convexity_profile(spec, path)
    lip = lipschitz_probe(path)
    I1, Im1 = float(I.value(1.0)), float(I.value(-1.0))
    ok = (abs(I1 + 4 / 3) <= 1e-12 and abs(Im1) <= 1e-12 and prof.verdict == "strictly_convex"
          and lip.verdict == "not_lipschitz")
    record(acceptance_log, 8, ok, f"I(1)={I1:.15g}, I(-1)={Im1:.3g}, profile {prof.verdict}, "
                                  f"endpoint {lip.verdict}")


# -- 9 ------------------------------------------------------------------------

def test_criterion_09_decay(acceptance_log):
    g = make_grid(Domain.radial(2, 8.0), 513)
    B2 = [[1.0, 0.2], [0.2, 1.0]]
    specs = {
        "gp k=1": ProblemSpec("gross_pitaevskii", {"k": 1, "B": [[1.0]], "mode": "fixed_mass", "V": "trap"}, g),
        "gp k=2": ProblemSpec("gross_pitaevskii", {"k": 2, "B": B2, "mode": "fixed_mass", "V": "trap"}, g),
        "schrodinger": ProblemSpec("schrodinger_dual", {"mode": "fixed_omega", "omega": 3.0, "V": "trap"}, g),
    }
    parts, ok = [], True
    for name, spec in specs.items():
        rep = solve(spec, random_start(spec, np.random.default_rng(0)))
        omegas = rep.multipliers or [spec.params["omega"]]
        ok &= rep.converged and not rep.truncation_rerun
        for i, a in enumerate(rep.state.arrays):
            fit = tail_fit((rep.state.grid, a), omegas[i], 2)
            ok &= fit.error <= RHO_TOL and fit.ratio <= RATIO_MAX
            parts.append(f"{name}[{i}] rho {fit.rho:.3f} vs {fit.target:.3f}, ratio {fit.ratio:.3f}")
    worst = 0.0
    for name in ("gp k=1", "gp k=2"):
        spec = specs[name]
        ms = multistart(spec, 4, 9, check_pairs=False)
        states = [ms.reports[i].state for i in ms.accepted]
        ok &= len(states) >= 2
        for a, b in itertools.combinations(states, 2):
            r = ineq.gp_energy_identity(spec, a, b, IDENTITY_REL)
            ok &= r.passed
            worst = max(worst, r.residual / r.scale)
    parts.append(f"identity max residual/scale {worst:.2e}")
    record(acceptance_log, 9, ok, "; ".join(parts))


# -- 10 -----------------------------------------------------------------------

@pytest.mark.parametrize("config", ["ex44_multistart.json", "inequalities.json", "gp_decay.json"])
def test_criterion_10_determinism(acceptance_log, tmp_path, config):
    blobs = []
    for threads in ("1", "8"):
        out = tmp_path / f"t{threads}"
        env = {**os.environ, "VARIPATH_THREADS": threads}
        proc = subprocess.run([sys.executable, "-m", "varipath", "run", str(ROOT / "configs" / config),
                               "-o", str(out)], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        blobs.append((out / "report.json").read_bytes())
    json.loads(blobs[0])
    record(acceptance_log, 10, blobs[0] == blobs[1],
           f"{config}: report.json byte-identical under 1 and 8 threads ({len(blobs[0])} bytes)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
