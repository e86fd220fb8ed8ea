"""Set-valued drift maps, their validation, and continuous upper approximants.

A drift oracle takes a pair of Euclidean iterates and a finite noise state
and returns a convex compact set.  Three facilities live here:

* structural validation of the oracle (convexity/compactness by
  representation, linear growth, sampled closed-graph witnesses),
* the level-l continuous embeddings built by swelling the graph: the union
  of values over a shrinking ball around the base point, inflated by a
  shrinking ball in the output space,
* single-valued parametrizations of an embedded value by projection from a
  covering ball, so the inclusion can be driven like an ordinary recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convex import (
    ConvexSet,
    direction_net,
    distance,
    minkowski_combine,
    project,
    support,
    unit_ball_set,
)

__all__ = [
    "SetValuedMap",
    "ApproxLevel",
    "SeqProbe",
    "SamReport",
    "validate_sam",
    "upper_approx",
    "parametrize",
]

CLOSED_GRAPH_TOL = 1e-8
_BALL_NET_SEED = 77003


class SetValuedMap:
    """Oracle (x, y, s) -> ConvexSet with declared linear growth.

    ``growth_K`` declares sup over returned generators of ||z|| bounded by
    growth_K * (1 + ||x|| + ||y||); the declaration is checked by
    ``validate_sam``, not enforced per call.
    """

    def __init__(self, dims, alphabet: int, evaluate: Callable, growth_K: float):
        d1, d2, k = dims
        if min(d1, k) < 1 or d2 < 0:
            raise ValueError(f"bad dims {dims}")
        if alphabet < 1:
            raise ValueError("alphabet size must be >= 1")
        if growth_K <= 0:
            raise ValueError("growth_K must be positive")
        self.dims = (int(d1), int(d2), int(k))
        self.alphabet = int(alphabet)
        self._evaluate = evaluate
        self.growth_K = float(growth_K)
        self._checked = False

    def __call__(self, x, y, s: int) -> ConvexSet:
        # Full argument validation runs on the first probe only; later calls
        # pay just for the oracle (drivers evaluate millions of times).
        if not self._checked:
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            d1, d2, k = self.dims
            if x.shape != (d1,) or y.shape != (d2,):
                raise ValueError(
                    f"probe shapes {x.shape}, {y.shape} do not match dims {self.dims}"
                )
            if not 0 <= s < self.alphabet:
                raise ValueError(
                    f"state {s} outside alphabet of size {self.alphabet}"
                )
            K = self._evaluate(x, y, s)
            if not isinstance(K, ConvexSet):
                K = ConvexSet(K)
            if K.dim != k:
                raise ValueError(f"oracle returned dim {K.dim}, declared {k}")
            self._checked = True
            return K
        K = self._evaluate(x, y, s)
        return K if isinstance(K, ConvexSet) else ConvexSet(K)

    def growth_bound(self, x, y) -> float:
        return self.growth_K * (
            1.0 + float(np.linalg.norm(x)) + float(np.linalg.norm(y))
        )


@dataclass(frozen=True)
class ApproxLevel:
    """Level-l constants of the upper-approximation construction."""

    l: int
    radius: float
    inflation: float
    growth_Kl: float

    @classmethod
    def for_map(cls, F: SetValuedMap, l: int) -> "ApproxLevel":
        if l < 1:
            raise ValueError("level must be >= 1")
        radius = 3.0 * 2.0 ** (-l)
        inflation = 2.0 ** (-l)
        # Bound over the swelled graph: probes move by at most radius, the
        # output inflates by at most inflation.
        growth_Kl = F.growth_K * (1.0 + 2.0 * radius) + inflation
        return cls(l=l, radius=radius, inflation=inflation, growth_Kl=growth_Kl)

    @property
    def net_size(self) -> int:
        return 2 ** min(self.l + 3, 8)


@dataclass
class SeqProbe:
    """A convergent witness sequence for the closed-graph check.

    ``points`` and ``values`` sample (x_n, y_n, s_n) and z_n in F(x_n,y_n,s_n);
    ``limit_point``/``limit_value`` are the declared limits.
    """

    points: list
    values: list
    limit_point: tuple
    limit_value: np.ndarray


@dataclass
class SamReport:
    convex_compact: bool = True
    growth_ok: bool = True
    closed_graph_ok: bool = True
    growth_violations: list = field(default_factory=list)
    closed_graph_failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.convex_compact and self.growth_ok and self.closed_graph_ok


def validate_sam(
    F: SetValuedMap,
    grid,
    seq_probes=(),
    tol: float = CLOSED_GRAPH_TOL,
) -> SamReport:
    """Check the drift-map contract at finitely many probes.

    Convexity and compactness hold by representation (finite generator
    hulls) and are recorded as such.  The growth declaration is evaluated at
    every grid probe; each witness sequence must keep its values inside the
    map and land its limit value inside the limit set.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("probe grid must be nonempty")
    report = SamReport()
    for x, y, s in grid:
        K = F(x, y, s)
        bound = F.growth_bound(x, y)
        worst = K.max_norm()
        if worst > bound + 1e-12:
            report.growth_ok = False
            report.growth_violations.append(((x, y, s), worst, bound))
    for probe in seq_probes:
        for (x, y, s), z in zip(probe.points, probe.values):
            if distance(F(x, y, s), z) > tol:
                report.closed_graph_ok = False
                report.closed_graph_failures.append(
                    ((x, y, s), np.asarray(z), "value outside map along sequence")
                )
        x, y, s = probe.limit_point
        gap = distance(F(x, y, s), probe.limit_value)
        if gap > tol:
            report.closed_graph_ok = False
            report.closed_graph_failures.append(
                (probe.limit_point, np.asarray(probe.limit_value), gap)
            )
    return report


_BALL_NET_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _ball_net(dim: int, size: int) -> np.ndarray:
    """Points in the closed unit ball: the origin, then unit directions.

    The directions are a fixed master sequence per dimension, so nets at
    consecutive levels are radially aligned prefixes of each other; this is
    what makes the sampled approximants nest on affine map families.
    """
    key = (dim, size)
    if key not in _BALL_NET_CACHE:
        if dim == 1:
            inner = np.linspace(-1.0, 1.0, size - 1).reshape(-1, 1)
            net = np.vstack([[[0.0]], inner])
        else:
            rng = np.random.default_rng(_BALL_NET_SEED + dim)
            raw = rng.standard_normal((max(size * 2, 512), dim))
            dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
            axes = np.vstack([np.eye(dim), -np.eye(dim)])
            master = np.vstack([axes, dirs])[: size - 1]
            net = np.vstack([np.zeros((1, dim)), master])
        net.flags.writeable = False
        _BALL_NET_CACHE[key] = net
    return _BALL_NET_CACHE[key]


def upper_approx(
    F: SetValuedMap, level: ApproxLevel, x, y, s: int
) -> ConvexSet:
    """Level-l outer approximation of F(x, y, s).

    Hull of the union of F over a sampled ball of radius ``level.radius``
    around (x, y), Minkowski-inflated by ``level.inflation`` times the unit
    ball.  The base point itself is always in the net, so the true value is
    always contained.  The noise state is held fixed: a finite alphabet
    carries the discrete metric and needs no smoothing across states.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d1, d2, k = F.dims
    base = np.concatenate([x, y])
    offsets = _ball_net(d1 + d2, level.net_size) * level.radius
    gens = []
    for off in offsets:
        xp = base[:d1] + off[:d1]
        yp = base[d1:] + off[d1:]
        gens.append(F(xp, yp, s).points)
    union = ConvexSet(np.vstack(gens)).reduced()
    ball = unit_ball_set(k)
    return minkowski_combine([1.0, level.inflation], [union, ball])


def parametrize(F_l_value: ConvexSet, u, R: float) -> np.ndarray:
    """Single-valued representation of an approximant value.

    Maps the closed unit ball onto the set: the image of u is the projection
    of c + R*u onto the set, where c is the generator centroid.  Surjectivity
    needs the ball c + R*U to cover the set, which is checked on generators.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (F_l_value.dim,):
        raise ValueError(f"u has shape {u.shape}, set has dim {F_l_value.dim}")
    nu = float(np.linalg.norm(u))
    if nu > 1.0 + 1e-12:
        raise ValueError(f"u must lie in the closed unit ball, got ||u||={nu}")
    c = F_l_value.centroid()
    covering = float(np.linalg.norm(F_l_value.points - c, axis=1).max())
    if R < covering - 1e-12:
        raise ValueError(
            f"R={R} does not cover the set: generator at distance {covering} from centroid"
        )
    return project(F_l_value, c + R * u)


def approx_support_gap(F: SetValuedMap, level: ApproxLevel, x, y, s: int):
    """Support values of F and its level-l approximant on the direction net."""
    k = F.dims[2]
    net = direction_net(k)
    K = F(x, y, s)
    Kl = upper_approx(F, level, x, y, s)
    sF = np.array([support(K, d) for d in net])
    sFl = np.array([support(Kl, d) for d in net])
    return sF, sFl
