"""Paths between states and numerical checks of the abstract uniqueness theorem.

A path is defined through an increasing generator Q applied nodewise:
Q(gamma(t)) = (1 - t) Q(u) + t Q(v).  Along such a path we sample the
energy profile j(t) = I(gamma(t)), probe Lipschitz continuity at t = 0 and
measure how comparable the endpoints are.  :func:`theorem1_check` runs all
three on every pair of computed critical points.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dual
from .grid import Grid
from .problems import ProblemSpec, State
from .reporting import write_csv

__all__ = [
    "Generator",
    "PathSpec",
    "PathError",
    "ConvexityProfile",
    "ComparabilityReport",
    "LipschitzReport",
    "PairCheck",
    "path_eval",
    "path_increment",
    "convexity_profile",
    "lipschitz_probe",
    "comparability",
    "theorem1_check",
    "TOL_CVX",
    "TOL_FLAT",
    "DEFAULT_SAMPLES",
]

TOL_CVX = 1e-7
TOL_FLAT = 1e-6
DEFAULT_SAMPLES = 65
PROBE_LEVELS = 20
GENERATOR_KINDS = ("power", "squared", "f_squared", "straight")


class PathError(ValueError):
    """Endpoints that the chosen generator cannot connect."""


@dataclass(frozen=True)
class Generator:
    """Increasing map Q used to interpolate one component.

    ``power`` is Q(x) = (x + shift)^r; ``squared`` is power with r = 2;
    ``f_squared`` is Q = f^2 with the Schrodinger dual transform f;
    ``straight`` is the identity (plain affine interpolation).
    """

    kind: str
    r: float = 2.0
    shift: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise PathError(f"unknown generator {self.kind!r}")
        if self.kind == "squared":
            object.__setattr__(self, "kind", "power")
            object.__setattr__(self, "r", 2.0)
        if self.kind == "power" and not self.r > 0:
            raise PathError("power generator needs r > 0")

    @classmethod
    def from_dict(cls, d: dict) -> Generator:
        d = dict(d)
        kind = d.pop("generator", d.pop("kind", None))
        return cls(kind, float(d.get("r", 2.0)), float(d.get("shift", 0.0)))

    def to_dict(self) -> dict:
        out = {"generator": self.kind}
        if self.kind == "power":
            out["r"] = self.r
            if self.shift:
                out["shift"] = self.shift
        return out

    def Q(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return (x + self.shift) ** self.r
        if self.kind == "f_squared":
            return dual.f(x) ** 2
        return x

    def Q_inv(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return np.maximum(y, 0.0) ** (1.0 / self.r) - self.shift
        if self.kind == "f_squared":
            return dual.f_inv(np.sqrt(np.maximum(y, 0.0)))
        return y

    def increment(self, u: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
        """gamma(t) - u without cancellation for small t."""
        if self.kind == "straight":
            return t * (v - u)
        if self.kind == "power":
            a, b = u + self.shift, v + self.shift
            return _power_increment(a, b, t, self.r)
        Fu, Fv = dual.f(u), dual.f(v)
        dF = _power_increment(Fu, Fv, t, 2.0)
        return _f_inv_difference(Fu + dF, Fu)


def _power_increment(a: np.ndarray, b: np.ndarray, t: float, r: float) -> np.ndarray:
    # ((1-t) a^r + t b^r)^(1/r) - a  =  a * expm1(log1p(t ((b/a)^r - 1)) / r)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = a > 0
    safe = np.where(pos, a, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        D = np.expm1(r * np.log(np.where(pos, b, 1.0) / safe))
        inc = safe * np.expm1(np.log1p(t * D) / r)
    return np.where(pos, inc, t ** (1.0 / r) * b)


def _f_inv_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """f_inv(a) - f_inv(b) for a, b >= 0, accurate when a is close to b."""
    d = a - b
    sA = np.sqrt(1.0 + 2.0 * a * a)
    sB = np.sqrt(1.0 + 2.0 * b * b)
    first = 0.5 * (d * sA + b * 2.0 * d * (a + b) / (sA + sB))
    den = a * sB + b * sA
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = np.where(den > 0, math.sqrt(2.0) * d * (a + b) / np.where(den > 0, den, 1.0), 0.0)
    return first + np.arcsinh(arg) / (2.0 * math.sqrt(2.0))


def _interior(grid: Grid | None, shape) -> np.ndarray:
    if grid is None:
        return np.ones(shape, dtype=bool)
    return grid.interior_mask


@dataclass(frozen=True, eq=False)
class PathSpec:
    """A Q-path from ``u`` to ``v`` with one generator per component."""

    generators: tuple[Generator, ...]
    u: State
    v: State
    require_positive: bool = True

    def __post_init__(self) -> None:
        gens = tuple(g if isinstance(g, Generator) else Generator.from_dict(g) for g in self.generators)
        object.__setattr__(self, "generators", gens)
        if len(self.u) != len(self.v):
            raise PathError("endpoints have different numbers of components")
        if len(gens) == 1 and len(self.u) > 1:
            gens = gens * len(self.u)
            object.__setattr__(self, "generators", gens)
        if len(gens) != len(self.u):
            raise PathError("need one generator per component")
        gu, gv = self.u.grid, self.v.grid
        if not (gu is gv or gu == gv):
            raise PathError("endpoints live on different grids")
        for g, a, b in zip(gens, self.u.arrays, self.v.arrays):
            if g.kind == "straight":
                continue
            m = _interior(gu, a.shape)
            lo = min(float(np.min(a[m] + g.shift)), float(np.min(b[m] + g.shift)))
            if self.require_positive and not lo > 0:
                raise PathError("path endpoints must be positive at interior nodes")
            if not lo >= 0:
                raise PathError("generator argument must be nonnegative")

    @classmethod
    def for_family(cls, spec: ProblemSpec, u: State, v: State) -> PathSpec:
        """The family's designated generator(s)."""
        return cls(tuple(Generator.from_dict(d) for d in spec.model.generator()), u, v)

    @property
    def grid(self) -> Grid | None:
        return self.u.grid

    def to_dict(self) -> dict:
        return {"generators": [g.to_dict() for g in self.generators]}


def path_eval(path: PathSpec, t: float) -> State:
    """gamma(t); exact endpoints and values clipped to the nodewise envelope."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise PathError(f"t must lie in [0,1], got {t}")
    if t == 0.0:
        return path.u
    if t == 1.0:
        return path.v
    out = []
    for g, a, b in zip(path.generators, path.u.arrays, path.v.arrays):
        x = g.Q_inv((1.0 - t) * g.Q(a) + t * g.Q(b))
        # Q is increasing, so gamma(t) lies between u and v; clip roundoff
        out.append(np.clip(x, np.minimum(a, b), np.maximum(a, b)))
    return State.from_arrays(path.grid, out)


def path_increment(path: PathSpec, t: float) -> list[np.ndarray]:
    """gamma(t) - u computed without cancellation."""
    return [g.increment(a, b, float(t)) for g, a, b in zip(path.generators, path.u.arrays, path.v.arrays)]


# ---------------------------------------------------------------------------
# convexity profile
# ---------------------------------------------------------------------------

@dataclass
class ConvexityProfile:
    t: np.ndarray
    j: np.ndarray
    d2j: np.ndarray
    mode: str = "convex"
    tol_cvx: float = TOL_CVX
    tol_flat: float = TOL_FLAT

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.j))))

    @property
    def min_d2j(self) -> float:
        return float(np.min(self.d2j))

    @property
    def slope0(self) -> float:
        return float((self.j[1] - self.j[0]) / (self.t[1] - self.t[0]))

    @property
    def flatness_gap(self) -> float:
        return float(np.max(np.abs(self.j - self.j[0])))

    @property
    def chord_excess(self) -> float:
        """max over interior samples of j(t) - ((1-t) j(0) + t j(1))."""
        chord = (1.0 - self.t) * self.j[0] + self.t * self.j[-1]
        return float(np.max((self.j - chord)[1:-1]))

    @property
    def verdict(self) -> str:
        tol = self.tol_cvx * self.scale
        if self.mode == "chord":
            e = self.chord_excess
            if e <= -tol:
                return "strict_chord"
            return "chord" if e <= tol else "not_chord"
        m = self.min_d2j
        if m >= tol:
            return "strictly_convex"
        return "convex" if m >= -tol else "not_convex"

    @property
    def convex(self) -> bool:
        return self.verdict in ("convex", "strictly_convex", "chord", "strict_chord")

    @property
    def flat(self) -> bool:
        return self.flatness_gap <= self.tol_flat * self.scale

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "m": int(self.t.size),
            "verdict": self.verdict,
            "min_d2j": self.min_d2j,
            "slope0": self.slope0,
            "flatness_gap": self.flatness_gap,
            "flat": self.flat,
            "scale": self.scale,
        }

    def write_csv(self, path) -> None:
        """Columns t, j, d2j (d2j empty at the two endpoints)."""
        last = self.t.size - 1
        write_csv(path, ["t", "j", "d2j"],
                  ((t, j, self.d2j[k - 1] if 0 < k < last else None)
                   for k, (t, j) in enumerate(zip(self.t, self.j))))


def convexity_profile(spec: ProblemSpec, path: PathSpec, m: int = DEFAULT_SAMPLES,
                      mode: str = "convex", t_range: tuple[float, float] = (0.0, 1.0)) -> ConvexityProfile:
    """Sample j(t) = I(gamma(t)) at m uniform points of ``t_range``.

    ``mode="chord"`` judges the weakened condition j(t) <= (1-t) j(0) + t j(1)
    instead of convexity.
    """
    if m < 17:
        raise ValueError("convexity profile needs m >= 17 samples")
    if mode not in ("convex", "chord"):
        raise ValueError(f"unknown mode {mode!r}")
    t0, t1 = t_range
    ts = np.linspace(t0, t1, m)
    ts[0], ts[-1] = t0, t1
    model = spec.model
    j = np.array([model.energy(path_eval(path, t).arrays) for t in ts])
    d2 = j[:-2] - 2.0 * j[1:-1] + j[2:]
    return ConvexityProfile(ts, j, d2, mode)


# ---------------------------------------------------------------------------
# Lipschitz probe
# ---------------------------------------------------------------------------

@dataclass
class LipschitzReport:
    t: np.ndarray
    quotients: np.ndarray
    verdict: str
    norm: str

    @property
    def lipschitz(self) -> bool:
        return self.verdict == "lipschitz"

    def to_dict(self) -> dict:
        return {"norm": self.norm, "verdict": self.verdict, "quotients": [float(q) for q in self.quotients]}


def _norm(grid: Grid | None, arrays: Sequence[np.ndarray], norm: str, p: float) -> float:
    if norm == "sup" or grid is None:
        return max(float(np.max(np.abs(a))) for a in arrays)
    ops = grid.ops
    w = grid.node_weights
    total = math.fsum(math.fsum(np.ravel(ops.cw * ops.sq(a) ** (p / 2.0))) + math.fsum(np.ravel(w * np.abs(a) ** p))
                      for a in arrays)
    return total ** (1.0 / p)


def _lipschitz_verdict(q: np.ndarray) -> str:
    if not np.all(np.isfinite(q)):
        return "not_lipschitz"
    tail = q[-5:]
    if np.all(np.diff(tail) > 0) and tail[0] > 0 and tail[-1] >= 1.5 * tail[0]:
        return "not_lipschitz"
    if float(np.max(q)) <= 2.0 * statistics.median(q.tolist()):
        return "lipschitz"
    return "inconclusive"


def lipschitz_probe(path: PathSpec, norm: str = "sup", p: float = 2.0,
                    levels: int = PROBE_LEVELS) -> LipschitzReport:
    """Quotients ||gamma(t) - u|| / t at t = 2^-1 ... 2^-levels.

    Lipschitz when the sequence stays below twice its median; not Lipschitz
    when its last five values increase by at least a factor 1.5.
    """
    if norm not in ("sup", "sobolev_p"):
        raise ValueError(f"unknown norm {norm!r}")
    ts = 2.0 ** -np.arange(1, levels + 1)
    q = np.array([_norm(path.grid, path_increment(path, t), norm, p) / t for t in ts])
    label = "sup" if norm == "sup" else f"sobolev_p({p:g})"
    return LipschitzReport(ts, q, _lipschitz_verdict(q), label)


# ---------------------------------------------------------------------------
# comparability
# ---------------------------------------------------------------------------

@dataclass
class ComparabilityReport:
    delta: float
    margin: float

    @property
    def comparable(self) -> bool:
        return math.isfinite(self.delta)

    def to_dict(self) -> dict:
        return {"delta": self.delta if self.comparable else "inf", "margin": self.margin}


def comparability(u: State, v: State) -> ComparabilityReport:
    """Smallest delta >= 1 with u/delta <= v <= delta u over interior nodes."""
    if len(u) != len(v) or not (u.grid is v.grid or u.grid == v.grid):
        raise PathError("states are not on the same grid")
    delta, margin = 1.0, math.inf
    for a, b in zip(u.arrays, v.arrays):
        m = _interior(u.grid, a.shape)
        ai, bi = a[m], b[m]
        margin = min(margin, float(np.min(np.minimum(ai, bi))))
        if np.any(ai <= 0) or np.any(bi <= 0):
            delta = math.inf
            continue
        delta = max(delta, float(np.max(np.maximum(ai / bi, bi / ai))))
    return ComparabilityReport(delta, margin)


# ---------------------------------------------------------------------------
# pairwise theorem check
# ---------------------------------------------------------------------------

@dataclass
class PairCheck:
    labels: tuple
    energies: tuple[float, float]
    energy_gap: float
    scale: float
    profile: ConvexityProfile
    lipschitz_u: LipschitzReport
    lipschitz_v: LipschitzReport
    comparability: ComparabilityReport
    gap_tol: float = TOL_FLAT

    @property
    def lipschitz(self) -> bool:
        return self.lipschitz_u.lipschitz and self.lipschitz_v.lipschitz

    @property
    def energy_ok(self) -> bool:
        return self.energy_gap <= self.gap_tol * self.scale

    @property
    def passed(self) -> bool:
        return self.energy_ok and self.profile.flat and self.lipschitz and self.profile.convex

    def to_dict(self) -> dict:
        return {
            "pair": list(self.labels),
            "energies": list(self.energies),
            "energy_gap": self.energy_gap,
            "scale": self.scale,
            "energy_ok": self.energy_ok,
            "hypotheses": {
                "a_endpoints": True,
                "b_lipschitz": self.lipschitz,
                "c_convex": self.profile.convex,
            },
            "profile": self.profile.to_dict(),
            "lipschitz_u": self.lipschitz_u.verdict,
            "lipschitz_v": self.lipschitz_v.verdict,
            "comparability": self.comparability.to_dict(),
            "passed": self.passed,
        }


def _reverse(path: PathSpec) -> PathSpec:
    return PathSpec(path.generators, path.v, path.u, path.require_positive)


def theorem1_check(spec: ProblemSpec, states: Sequence[State], labels: Sequence | None = None,
                   m: int = DEFAULT_SAMPLES, mode: str = "convex", norm: str = "sup") -> list[PairCheck]:
    """Energy gap, path profile, Lipschitz probes and comparability for every pair."""
    labels = list(range(len(states))) if labels is None else list(labels)
    model = spec.model
    energies = [model.energy(s.arrays) for s in states]
    out = []
    for a, b in itertools.combinations(range(len(states)), 2):
        path = PathSpec.for_family(spec, states[a], states[b])
        prof = convexity_profile(spec, path, m=m, mode=mode)
        scale = max(prof.scale, 1.0)
        out.append(PairCheck(
            labels=(labels[a], labels[b]),
            energies=(energies[a], energies[b]),
            energy_gap=abs(energies[a] - energies[b]),
            scale=scale,
            profile=prof,
            lipschitz_u=lipschitz_probe(path, norm),
            lipschitz_v=lipschitz_probe(_reverse(path), norm),
            comparability=comparability(states[a], states[b]),
        ))
    return out
