import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varipath.experiments import toy_spec
from varipath.grid import Domain, make_grid
from varipath.paths import (Generator, PathError, PathSpec, comparability, convexity_profile,
                            lipschitz_probe, path_eval, path_increment, theorem1_check)
from varipath.problems import ProblemSpec, State, constraint_value
from varipath.scalarfn import ScalarFn
from varipath.solvers import multistart

G = make_grid(Domain.interval(0, 1), 129)
R = make_grid(Domain.radial(2, 8.0), 257)
SINE = G.apply_bc(np.sin(np.pi * G.x))


def st_(arr, grid=G):
    return State.from_arrays(grid, [arr])


def toy_path():
    spec = toy_spec()
    u, v = State.from_arrays(None, [[-1.0]]), State.from_arrays(None, [[1.0]])
    gen = Generator.from_dict(spec.model.generator()[0])
    return spec, PathSpec((gen,), u, v, require_positive=False)


def test_power_path_midpoint():
    n = make_grid(Domain.interval(0, 1, "natural"), 17)
    p = PathSpec((Generator("power", 2.0),), st_(np.full(17, 3.0), n), st_(np.full(17, 4.0), n))
    np.testing.assert_allclose(path_eval(p, 0.5).arrays[0], math.sqrt(12.5), rtol=1e-15)


def test_endpoints_bit_exact():
    rng = np.random.default_rng(0)
    u, v = st_(SINE * (1 + rng.random(129))), st_(SINE * (1 + rng.random(129)))
    for gen in ("power", "f_squared", "straight"):
        p = PathSpec((Generator(gen, 1.7),), u, v)
        assert path_eval(p, 0.0).arrays[0].tobytes() == u.arrays[0].tobytes()
        assert path_eval(p, 1.0).arrays[0].tobytes() == v.arrays[0].tobytes()


def test_f_squared_degenerate():
    p = PathSpec((Generator("f_squared"),), st_(SINE), st_(SINE))
    for t in (0.1, 0.5, 0.9):
        np.testing.assert_array_equal(path_eval(p, t).arrays[0], SINE)


@given(st.integers(0, 2 ** 31), st.floats(0.0, 1.0), st.sampled_from(["power", "f_squared", "straight"]),
       st.floats(0.3, 4.0))
def test_monotone_envelope(seed, t, gen, r):
    rng = np.random.default_rng(seed)
    u, v = st_(SINE * (0.1 + 3 * rng.random(129))), st_(SINE * (0.1 + 3 * rng.random(129)))
    a, b = u.arrays[0], v.arrays[0]
    g = path_eval(PathSpec((Generator(gen, r),), u, v), t).arrays[0]
    assert np.all(np.minimum(a, b) <= g) and np.all(g <= np.maximum(a, b))


@given(st.integers(0, 2 ** 31), st.floats(1e-6, 1.0), st.sampled_from(["power", "f_squared"]))
def test_increment_matches_difference(seed, t, gen):
    rng = np.random.default_rng(seed)
    a, b = SINE * (0.5 + rng.random(129)), SINE * (0.5 + rng.random(129))
    p = PathSpec((Generator(gen, 1.5),), st_(a), st_(b))
    direct = path_eval(p, t).arrays[0] - a
    np.testing.assert_allclose(path_increment(p, t)[0], direct, rtol=1e-8, atol=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(0.0, 1.0))
def test_gp_squared_path_keeps_mass(seed, t):
    spec = ProblemSpec("gross_pitaevskii", {"k": 2, "B": [[1, .2], [.2, 1]], "mode": "fixed_mass"}, R)
    rng = np.random.default_rng(seed)
    env = np.exp(-R.x ** 2 / 2) * (1 - (R.x / 8) ** 2)

    def unit():
        x = env * (0.5 + rng.random(R.size))
        return x / math.sqrt(spec.model.constraint([x, x])[0])

    u = State.from_arrays(R, [unit(), unit()])
    v = State.from_arrays(R, [unit(), unit()])
    path = PathSpec.for_family(spec, u, v)
    assert all(g.kind == "power" and g.r == 2.0 for g in path.generators)
    np.testing.assert_allclose(constraint_value(spec, path_eval(path, t)), 1.0, rtol=0, atol=1e-12)


def test_reparameterization_consistency():
    spec = ProblemSpec("generalized_plap", {"p": 2, "g": ScalarFn.power(0.5)}, G)
    u, v = st_(0.3 * SINE), st_(SINE * (1 + G.x))
    path = PathSpec((Generator("power", 1.5),), u, v)
    t1, t2 = 0.2, 0.7
    sub = PathSpec(path.generators, path_eval(path, t1), path_eval(path, t2))
    full = convexity_profile(spec, path, m=33, t_range=(t1, t2))
    part = convexity_profile(spec, sub, m=33)
    np.testing.assert_allclose(part.j, full.j, rtol=1e-12, atol=1e-14)
    assert part.verdict == full.verdict


def test_toy_profile_closed_form():
    spec, path = toy_path()
    prof = convexity_profile(spec, path)
    t = prof.t
    s = 2 * t - 1
    ref = (2 * math.sqrt(2) / 3) * (1 + s) ** 1.5 - 2 * (1 + s)
    np.testing.assert_allclose(prof.j, ref, atol=1e-10)
    assert prof.verdict == "strictly_convex"
    lip = lipschitz_probe(path)
    assert lip.verdict == "not_lipschitz"
    np.testing.assert_allclose(lip.quotients, 2 / np.sqrt(lip.t), rtol=1e-12)


def test_zero_to_one_not_lipschitz():
    n = make_grid(Domain.interval(0, 1, "natural"), 17)
    path = PathSpec((Generator("power", 2.0),), st_(np.zeros(17), n), st_(np.ones(17), n),
                    require_positive=False)
    rep = lipschitz_probe(path)
    assert rep.verdict == "not_lipschitz"
    np.testing.assert_allclose(rep.quotients, rep.t ** -0.5, rtol=1e-14)


@pytest.mark.parametrize("r", [0.5, 1.5, 2.0, 4.0])
@pytest.mark.parametrize("norm", ["sup", "sobolev_p"])
def test_comparable_endpoints_lipschitz(r, norm):
    path = PathSpec((Generator("power", r),), st_(SINE), st_(SINE * (1 + G.x / 2)))
    assert lipschitz_probe(path, norm=norm).verdict == "lipschitz"


def test_comparability_values():
    n = make_grid(Domain.interval(0, 1, "natural"), 17)
    assert comparability(st_(np.ones(17), n), st_(np.full(17, 2.0), n)).delta == 2.0
    assert comparability(st_(SINE), st_(SINE)).delta == 1.0
    # sup over interior nodes of 1 + x/2 is attained at the last interior node
    d = comparability(st_(SINE), st_(SINE * (1 + G.x / 2))).delta
    assert d == pytest.approx(1.5 - G.h / 2, abs=1e-12)
    assert d <= 1.5


def test_incomparable_when_zero_inside():
    bump = np.where(G.x < 0.5, SINE, 0.0)
    rep = comparability(st_(SINE), st_(bump))
    assert not rep.comparable


def test_flat_on_constant_path():
    spec = ProblemSpec("generalized_plap", {"p": 2, "g": ScalarFn.power(0.5)}, G)
    prof = convexity_profile(spec, PathSpec((Generator("power", 1.5),), st_(SINE), st_(SINE)))
    assert prof.flat and prof.flatness_gap == 0.0 and prof.verdict == "convex"


def test_rescaled_eigenfunctions_convex_not_strict():
    lam = 4 / G.h ** 2 * math.sin(math.pi * G.h / 2) ** 2
    spec = ProblemSpec("p_eigenvalue", {"p": 2, "Lambda": lam}, G)
    prof = convexity_profile(spec, PathSpec((Generator("power", 2.0),), st_(SINE), st_(2 * SINE)))
    assert prof.verdict == "convex"


def test_affine_reparameterization_keeps_verdict():
    spec, path = toy_path()
    a = convexity_profile(spec, path, m=33)
    b = convexity_profile(spec, path, m=65)
    assert a.verdict == b.verdict == "strictly_convex"


def test_chord_mode():
    spec, path = toy_path()
    assert convexity_profile(spec, path, mode="chord").verdict == "strict_chord"
    with pytest.raises(ValueError):
        convexity_profile(spec, path, mode="other")
    with pytest.raises(ValueError):
        convexity_profile(spec, path, m=5)


def test_path_errors():
    with pytest.raises(PathError):
        Generator("cubic")
    with pytest.raises(PathError):
        PathSpec((Generator("power"),), st_(SINE), st_(SINE * np.abs(G.x - 0.5)))  # zero at an interior node
    with pytest.raises(PathError):
        path_eval(PathSpec((Generator("power"),), st_(SINE), st_(SINE)), 1.5)
    other = make_grid(Domain.interval(0, 2), 129)
    with pytest.raises(PathError):
        PathSpec((Generator("power"),), st_(SINE), st_(SINE, other))


def test_theorem1_on_multistart_pair():
    spec = ProblemSpec("generalized_plap", {"p": 2, "g": ScalarFn.power(0.5)}, G)
    rep = multistart(spec, 3, 4, check_pairs=False)
    states = [rep.reports[i].state for i in rep.accepted]
    assert theorem1_check(spec, states[:1]) == []
    checks = theorem1_check(spec, states, labels=rep.accepted)
    assert len(checks) == 3
    for c in checks:
        assert c.passed and c.profile.flat and c.energy_gap <= 1e-6 * c.scale
        d = c.to_dict()
        assert d["hypotheses"] == {"a_endpoints": True, "b_lipschitz": True, "c_convex": True}


def test_profile_csv(tmp_path):
    spec, path = toy_path()
    prof = convexity_profile(spec, path, m=17)
    f = tmp_path / "p.csv"
    prof.write_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,j,d2j" and len(lines) == 18 and lines[1].endswith(",")
