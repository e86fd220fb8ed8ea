"""Differential inclusions: explicit-Euler solving and dynamical diagnostics.

Solutions are built by choosing one admissible velocity per step.  The
default Filippov-style choice is the least-norm element, which makes sliding
modes and equilibria fixed points of the integrator; target and
parametrized selections probe other branches of the solution set.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .convex import ConvexSet, distance, project
from .meanfield import MeanField
from .svmaps import parametrize

__all__ = [
    "DIPath",
    "di_solve",
    "limit_set",
    "attractor_check",
    "chain_search",
    "apt_metric",
    "select_velocity",
]

MEMBERSHIP_TOL = 1e-8


@dataclass
class DIPath:
    """Euler path of a differential inclusion.

    states[i+1] = states[i] + (times[i+1] - times[i]) * selections[i] holds
    exactly; every selection lies in the field at its state within tolerance.
    """

    times: np.ndarray       # (N+1,)
    states: np.ndarray      # (N+1, k)
    selections: np.ndarray  # (N, k)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.selections = np.atleast_2d(np.asarray(self.selections, dtype=float))
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have equal length")
        if len(self.selections) != len(self.states) - 1:
            raise ValueError("need one selection per step")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear state at time ``t``."""
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        if len(self.times) == 1:
            return self.states[0]
        t = min(max(t, self.times[0]), self.times[-1])
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(i, len(self.times) - 2)
        dt = self.times[i + 1] - self.times[i]
        a = (t - self.times[i]) / dt
        return (1 - a) * self.states[i] + a * self.states[i + 1]

    def euler_residual(self) -> float:
        dt = np.diff(self.times)[:, None]
        pred = self.states[:-1] + dt * self.selections
        return float(np.abs(pred - self.states[1:]).max())

    def membership_residual(self, field: MeanField) -> float:
        worst = 0.0
        for z, v in zip(self.states[:-1], self.selections):
            worst = max(worst, distance(field(z), v))
        return worst

    def to_csv(self, path) -> None:
        k = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write(
                "# columns: t, z[0.." + str(k) + "), v[0.." + str(k) + ")\n"
            )
            writer = csv.writer(fh)
            writer.writerow(
                ["t"] + [f"z{i}" for i in range(k)] + [f"v{i}" for i in range(k)]
            )
            pad = np.vstack([self.selections, np.zeros((1, k))])
            for t, z, v in zip(self.times, self.states, pad):
                writer.writerow(
                    [f"{t:.17g}"]
                    + [f"{c:.17g}" for c in z]
                    + [f"{c:.17g}" for c in v]
                )


def select_velocity(
    K: ConvexSet,
    rule: str,
    z,
    dt: float,
    target: Optional[np.ndarray] = None,
    u: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Pick one admissible velocity from a set by the named rule."""
    if K.n_points == 1:
        return K.points[0]
    if rule == "least_norm":
        v = project(K, np.zeros(K.dim))
        # Equilibria must be exact fixed points of the integrator.
        if float(np.linalg.norm(v)) <= 1e-12 * (1.0 + K.max_norm()):
            return np.zeros(K.dim)
        return v
    if rule == "target":
        if target is None:
            raise ValueError("target rule needs a target point")
        gap = np.asarray(target, dtype=float) - np.asarray(z, dtype=float)
        return project(K, gap / max(dt, float(np.linalg.norm(gap))))
    if rule == "param":
        if u is None:
            raise ValueError("param rule needs a ball point u")
        c = K.centroid()
        R = float(np.linalg.norm(K.points - c, axis=1).max()) + 1e-12
        return parametrize(K, u, R)
    if rule == "random_vertex":
        if rng is None:
            raise ValueError("random_vertex rule needs an rng")
        return K.points[rng.integers(K.n_points)]
    raise ValueError(f"unknown selection rule {rule!r}")


def di_solve(
    H: MeanField,
    z0,
    T: float,
    dt: float,
    selection: str = "least_norm",
    target: Optional[np.ndarray] = None,
    u: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> DIPath:
    """Explicit Euler integration of dz/dt in H(z) with a selection rule."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("horizon must be at least one step")
    z0 = np.asarray(z0, dtype=float)
    n = int(round(T / dt))
    states = np.empty((n + 1, H.dim))
    sels = np.empty((n, H.dim))
    states[0] = z0
    max_norm = float(np.linalg.norm(z0))
    for i in range(n):
        K = H(states[i])
        v = select_velocity(K, selection, states[i], dt, target=target, u=u, rng=rng)
        sels[i] = v
        states[i + 1] = states[i] + dt * v
        max_norm = max(max_norm, float(np.linalg.norm(states[i + 1])))
    if dt * H.growth_K * (1.0 + max_norm) > 0.1:
        warnings.warn(
            f"Euler step dt={dt} is coarse for growth {H.growth_K} at "
            f"norm {max_norm:.3g}; results may be inaccurate",
            RuntimeWarning,
            stacklevel=2,
        )
    times = dt * np.arange(n + 1)
    return DIPath(times=times, states=states, selections=sels)


def limit_set(path: DIPath, burn_in: float, tol: float = 1e-3) -> np.ndarray:
    """Representatives of the path's tail after ``burn_in``.

    Greedy clustering with radius tol/2, approximating the omega-limit set
    of the sampled trajectory.
    """
    if burn_in >= path.horizon:
        raise ValueError("burn_in must be below the path horizon")
    tail = path.states[path.times >= burn_in]
    if len(tail) == 0:
        raise ValueError("empty tail")
    reps: list[np.ndarray] = []
    for z in tail:
        if not any(np.linalg.norm(z - r) <= 0.5 * tol for r in reps):
            reps.append(z)
    return np.array(reps)


def attractor_check(
    H: MeanField,
    A,
    neighborhood_radius: float,
    eps: float,
    T_max: float,
    n_starts: int,
    dt: float = 1e-2,
    seed: int = 0,
):
    """Empirical attracting-set test around the point cloud ``A``.

    Starts are sampled in the radius-neighborhood of A; each runs under the
    least-norm rule plus four random parametrized selections.  Returns
    (status, witness) with status ``"attracting"`` when every path enters
    and stays in the eps-neighborhood by T_max, ``"not_attracting"`` when a
    path ends outside it, and ``"inconclusive"`` when a path is still
    approaching at the horizon.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        raise ValueError("A must be nonempty")
    rng = np.random.default_rng(seed)
    statuses = []
    witness = None
    worst_gap = -np.inf

    def dist_to_A(z):
        return float(np.linalg.norm(A - z, axis=1).min())

    selections = [("least_norm", None)]
    for _ in range(4):
        raw = rng.standard_normal(H.dim)
        u = raw / max(1.0, float(np.linalg.norm(raw)))
        selections.append(("param", u))

    for _ in range(n_starts):
        anchor = A[rng.integers(len(A))]
        offset = rng.standard_normal(H.dim)
        offset *= neighborhood_radius * rng.random() / max(
            1e-12, float(np.linalg.norm(offset))
        )
        z0 = anchor + offset
        for rule, u in selections:
            path = di_solve(H, z0, T_max, dt, selection=rule, u=u, rng=rng)
            dists = np.array([dist_to_A(z) for z in path.states])
            inside = dists <= eps
            if inside.any():
                first = int(np.argmax(inside))
                stays = bool(inside[first:].all())
            else:
                stays = False
            final = dists[-1]
            if stays:
                statuses.append("attracting")
            elif final > eps and final >= dists[max(0, len(dists) // 2)] - 1e-12:
                statuses.append("not_attracting")
            else:
                statuses.append("inconclusive")
            if final > worst_gap:
                worst_gap = final
                witness = path
    if all(s == "attracting" for s in statuses):
        return "attracting", witness
    if any(s == "not_attracting" for s in statuses):
        return "not_attracting", witness
    return "inconclusive", witness


def chain_search(
    H: MeanField,
    a,
    b,
    eps: float,
    T: float,
    dt: float = 1e-2,
    max_fragments: int = 32,
    n_attempts: int = 8,
    seed: int = 0,
) -> str:
    """Sampled search for an (eps, T)-chain of solution fragments a -> b.

    A falsifier only: returns ``"found"`` when a concatenation of solution
    fragments of duration at least T, with eps-jumps between fragments,
    lands within eps of ``b``; returns ``"not_found"`` when the budget is
    exhausted.  Absence of a chain within budget never disproves chain
    transitivity.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    for _ in range(n_attempts):
        z = a + eps * rng.standard_normal(H.dim) / max(1.0, np.sqrt(H.dim))
        for _ in range(max_fragments):
            rule = "target" if rng.random() < 0.75 else "least_norm"
            path = di_solve(H, z, T=T, dt=dt, selection=rule, target=b)
            end = path.states[-1]
            if float(np.linalg.norm(end - b)) <= eps:
                return "found"
            # eps-jump to start the next fragment.
            z = end + eps * rng.standard_normal(H.dim) / max(1.0, np.sqrt(H.dim))
    return "not_found"


def apt_metric(times, f_values, g_values, K_terms: int) -> float:
    """Weighted compact-window distance between two sampled paths.

    sum_{k=1}^{K} 2^{-k} min(sup_{[0, min(k, T_w)]} ||f - g||, 1) on a shared
    grid; trajectories are compared on their forward window with the tail
    weights saturating at the window length.
    """
    if K_terms < 1:
        raise ValueError("K_terms must be >= 1")
    times = np.asarray(times, dtype=float)
    f_values = np.atleast_2d(np.asarray(f_values, dtype=float))
    g_values = np.atleast_2d(np.asarray(g_values, dtype=float))
    if f_values.shape != g_values.shape or len(times) != len(f_values):
        raise ValueError("paths must share a common grid")
    gaps = np.linalg.norm(f_values - g_values, axis=1)
    total = 0.0
    for k in range(1, K_terms + 1):
        window = times <= min(float(k), times[-1]) + 1e-12
        total += 2.0**-k * min(float(gaps[window].max()), 1.0)
    return total
