"""Markov-averaged constrained convex optimization by primal-dual recursion.

The target problem minimizes a state-averaged convex objective subject to
state-averaged affine equality constraints, where the averaging law is the
unknown stationary distribution of an observed Markov chain.  The solver
never touches that law: the primal iterate descends along a noisy penalized
subgradient evaluated at the current chain state while the dual iterate
ascends along the observed constraint residual, on a slower clock.

Verification utilities do use the stationary law: the frozen Lagrangian,
its unique minimizer, the dual value, the envelope identity along the dual
flow, and optimality gaps of trajectory tails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .convex import ConvexSet, direction_net, minkowski_combine, project
from .dynamics import DIPath
from .markov import FiniteKernel, stationary_set
from .meanfield import MeanField, slow_field
from .recursion import NoiseModel, StepSchedule, Trajectory, run
from .svmaps import SetValuedMap

__all__ = [
    "SaddleProblem",
    "SolverStallError",
    "quadratic_problem",
    "penalized_objective",
    "penalized_subgrad",
    "lagrangian",
    "lambda_min",
    "dual_value",
    "primal_drift",
    "dual_drift",
    "dual_ode_field",
    "averaged_slow_field",
    "run_primal_dual",
    "optimality_report",
    "verify_envelope",
    "OptimalityReport",
    "EnvelopeReport",
]

FEASIBILITY_TOL = 1e-9
GRAD_TOL = 1e-9
MEMBERSHIP_TOL = 1e-6
_COERCIVITY_RAYS = 64
_COERCIVITY_SEED = 4242


class SolverStallError(RuntimeError):
    """Inner minimization stalled before reaching its residual target."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"inner solver stalled after {iterations} iterations, "
            f"subgradient residual {residual:.3e}"
        )
        self.residual = residual
        self.iterations = iterations


class SaddleProblem:
    """Data of the penalized state-averaged constrained convex program.

    ``objective(x, s)`` and ``subgrad(x, s)`` describe a per-state convex
    coercive objective with compact subdifferentials of linear growth
    ``growth_K``; ``C[s]`` and ``w[s]`` give per-state affine equality
    constraints witnessed feasible by ``feasible_points[s]``.  ``radius``
    must enclose the witnesses and clear the sampled coercivity check;
    ``epsilon`` sets both the strong-convexity term and the optimality slack
    the penalized solution is allowed versus the original problem.
    """

    def __init__(
        self,
        objective: Callable,
        subgrad: Callable,
        C,
        w,
        kernel: FiniteKernel,
        epsilon: float,
        radius: float,
        growth_K: float,
        feasible_points,
    ):
        self.objective = objective
        self.subgrad = subgrad
        self.C = np.asarray(C, dtype=float)
        self.w = np.asarray(w, dtype=float)
        if self.C.ndim != 3 or self.w.ndim != 2:
            raise ValueError("C must be (|S|, d2, d1) and w (|S|, d2)")
        self.alphabet, self.d2, self.d1 = self.C.shape
        if self.w.shape != (self.alphabet, self.d2):
            raise ValueError(f"w has shape {self.w.shape}")
        if kernel.alphabet != self.alphabet:
            raise ValueError("kernel alphabet does not match constraint data")
        self.kernel = kernel
        if epsilon <= 0 or radius <= 0 or growth_K <= 0:
            raise ValueError("epsilon, radius and growth_K must be positive")
        self.epsilon = float(epsilon)
        self.radius = float(radius)
        self.growth_K = float(growth_K)
        self.feasible_points = np.atleast_2d(np.asarray(feasible_points, dtype=float))
        if self.feasible_points.shape != (self.alphabet, self.d1):
            raise ValueError("need one feasible witness per state")
        self._validate()
        self._mu: Optional[np.ndarray] = None
        self._C_mu: Optional[np.ndarray] = None
        self._w_mu: Optional[np.ndarray] = None

    def _validate(self) -> None:
        for s in range(self.alphabet):
            x_s = self.feasible_points[s]
            gap = float(np.linalg.norm(self.C[s] @ x_s - self.w[s]))
            if gap > FEASIBILITY_TOL:
                raise ValueError(
                    f"witness for state {s} violates its constraint by {gap:.3e}"
                )
        worst = float(np.linalg.norm(self.feasible_points, axis=1).max())
        if self.radius <= worst:
            raise ValueError(
                f"radius {self.radius} does not exceed the witness norm {worst}"
            )
        # Sampled coercivity: on the radius sphere the objective must clear
        # the best witness value, which by convexity pushes it above that
        # level outside the ball as well.
        m1 = max(
            self.objective(self.feasible_points[s], sp)
            for s in range(self.alphabet)
            for sp in range(self.alphabet)
        )
        level = max(0.0, m1)
        rng = np.random.default_rng(_COERCIVITY_SEED)
        rays = rng.standard_normal((_COERCIVITY_RAYS, self.d1))
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        for u in rays:
            for s in range(self.alphabet):
                val = self.objective(self.radius * u, s)
                if val <= level:
                    raise ValueError(
                        f"coercivity check failed: J({self.radius}*u, {s}) = "
                        f"{val} <= {level} along a sampled ray"
                    )

    # -- stationary-law verification data ---------------------------------

    def reference_point(self) -> np.ndarray:
        return self.feasible_points.mean(axis=0)

    @property
    def mu(self) -> np.ndarray:
        """Unique stationary row of the kernel frozen at the reference point."""
        if self._mu is None:
            P = self.kernel.frozen(self.reference_point(), np.zeros(self.d2))
            stat = stationary_set(P)
            if stat.n_vertices != 1:
                raise ValueError(
                    f"the chain has {stat.n_vertices} stationary vertices; "
                    "the dual machinery needs a unique stationary law"
                )
            self._mu = stat.vertices[0]
        return self._mu

    @property
    def C_mu(self) -> np.ndarray:
        if self._C_mu is None:
            self._C_mu = np.tensordot(self.mu, self.C, axes=1)
        return self._C_mu

    @property
    def w_mu(self) -> np.ndarray:
        if self._w_mu is None:
            self._w_mu = self.mu @ self.w
        return self._w_mu

    def J_mu(self, x) -> float:
        return float(
            sum(self.mu[s] * self.objective(x, s) for s in range(self.alphabet))
        )

    def Jhat_mu(self, x) -> float:
        return self.J_mu(x) + _penalty_value(self, np.asarray(x, dtype=float))

    def K_prime(self) -> float:
        """Growth constant of the minimizer map: max of growth, radius, ||C_mu^T||."""
        return max(
            self.growth_K,
            self.radius,
            float(np.linalg.norm(self.C_mu.T, 2)),
        )


def quadratic_problem(
    theta, C, w, kernel: FiniteKernel, epsilon: float, radius: float,
    growth_K: Optional[float] = None, feasible_points=None,
) -> SaddleProblem:
    """Built-in family J(x, s) = 0.5 ||x - theta_s||^2 with affine constraints."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    C = np.asarray(C, dtype=float)
    w = np.asarray(w, dtype=float)

    def objective(x, s):
        return 0.5 * float(np.sum((np.asarray(x, dtype=float) - theta[s]) ** 2))

    def subgrad(x, s):
        return ConvexSet.singleton(np.asarray(x, dtype=float) - theta[s])

    if growth_K is None:
        # ||x - theta_s|| <= (1 + max||theta||)(1 + ||x||).
        growth_K = 1.0 + float(np.linalg.norm(theta, axis=1).max())
    if feasible_points is None:
        feasible_points = [
            np.linalg.lstsq(C[s], w[s], rcond=None)[0] for s in range(C.shape[0])
        ]
    return SaddleProblem(
        objective=objective,
        subgrad=subgrad,
        C=C,
        w=w,
        kernel=kernel,
        epsilon=epsilon,
        radius=radius,
        growth_K=growth_K,
        feasible_points=feasible_points,
    )


def _penalty_value(P: SaddleProblem, x: np.ndarray) -> float:
    n2 = float(x @ x)
    r2 = P.radius**2
    return (P.epsilon / (2 * r2)) * n2 + 0.5 * (P.growth_K + 1) * max(n2 - r2, 0.0)


def penalized_objective(P: SaddleProblem, x, s: int) -> float:
    """Objective plus strong-convexity term plus outer quadratic barrier."""
    x = np.asarray(x, dtype=float)
    return float(P.objective(x, s)) + _penalty_value(P, x)


def penalized_subgrad(P: SaddleProblem, x, s: int) -> ConvexSet:
    """Subdifferential of the penalized objective at x for state s.

    On the barrier sphere the max term contributes the segment between the
    two one-sided gradients, so the value is genuinely set-valued there.
    """
    x = np.asarray(x, dtype=float)
    base = P.subgrad(x, s)
    if not isinstance(base, ConvexSet):
        base = ConvexSet(base)
    shift = (P.epsilon / P.radius**2) * x
    nrm = float(np.linalg.norm(x))
    outer = (P.growth_K + 1) * x
    band = 1e-9 * max(1.0, P.radius)
    if nrm < P.radius - band:
        return base.translate(shift)
    if nrm > P.radius + band:
        return base.translate(shift + outer)
    segment = ConvexSet(np.vstack([np.zeros(P.d1), outer]))
    return minkowski_combine([1.0, 1.0], [base.translate(shift), segment])


def _subgrad_mu(P: SaddleProblem, x: np.ndarray) -> ConvexSet:
    sets = [penalized_subgrad(P, x, s) for s in range(P.alphabet)]
    return minkowski_combine(P.mu, sets)


def _raw_subgrad_mu(P: SaddleProblem, x: np.ndarray) -> ConvexSet:
    """Averaged subdifferential of the unpenalized objective."""
    sets = []
    for s in range(P.alphabet):
        G = P.subgrad(x, s)
        sets.append(G if isinstance(G, ConvexSet) else ConvexSet(G))
    return minkowski_combine(P.mu, sets)


def _prox_penalty(P: SaddleProblem, v: np.ndarray, gamma: float) -> np.ndarray:
    """Exact proximal map of the penalty terms (radial piecewise quadratic)."""
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(v)
    a = gamma * P.epsilon / P.radius**2
    rho = nv / (1.0 + a)
    if rho > P.radius:
        rho_out = nv / (1.0 + a + gamma * (P.growth_K + 1))
        rho = rho_out if rho_out >= P.radius else P.radius
    return (rho / nv) * v


def lagrangian(P: SaddleProblem, x, y) -> float:
    """Frozen Lagrangian J_mu-hat(x) + <y, C_mu x - w_mu>."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return P.Jhat_mu(x) + float(y @ (P.C_mu @ x - P.w_mu))


def lambda_min(
    P: SaddleProblem,
    y,
    x0=None,
    grad_tol: float = GRAD_TOL,
    max_iter: int = 500,
) -> np.ndarray:
    """Unique minimizer of the Lagrangian in x at the given multiplier.

    Proximal-subgradient iteration: the objective part moves along its
    least-norm subgradient with spectral (Barzilai-Borwein) steps under an
    Armijo safeguard, while the penalty terms, whose kink at the barrier
    sphere would make plain subgradient steps chatter, are folded in by
    their exact radial proximal map.  The strong-convexity term guarantees
    a unique minimizer; convergence is declared on the prox-gradient
    mapping residual and verified by support-function membership of the
    origin in the full subdifferential.
    """
    y = np.asarray(y, dtype=float)
    cy = P.C_mu.T @ y
    x = np.array(x0, dtype=float) if x0 is not None else P.reference_point().copy()

    def value(z):
        return P.Jhat_mu(z) + float(cy @ z)

    def smooth_grad(z):
        G = _raw_subgrad_mu(P, z)
        if G.n_points == 1:
            return G.points[0] + cy
        return project(G, -cy) + cy

    fx = value(x)
    g = smooth_grad(x)
    gamma = 1.0
    prev_x = prev_g = None
    residual = np.inf
    for it in range(max_iter):
        if prev_x is not None:
            dx = x - prev_x
            dg = g - prev_g
            denom = float(dg @ dg)
            if denom > 0:
                gamma = min(max(float(dx @ dg) / denom, 1e-12), 1e3)
        step = gamma
        # Rounding slack keeps the sufficient-decrease test meaningful once
        # the true decrease falls below float resolution of the value.
        slack = 8 * np.finfo(float).eps * (1.0 + abs(fx))
        for _ in range(60):
            x_new = _prox_penalty(P, x - step * g, step)
            f_new = value(x_new)
            move2 = float(np.sum((x_new - x) ** 2))
            if f_new <= fx - (0.25 / step) * move2 + slack:
                break
            step *= 0.5
        else:
            raise SolverStallError(residual, it)
        residual = float(np.linalg.norm(x_new - x)) / step
        prev_x, prev_g = x, g
        x, fx = x_new, f_new
        if residual <= grad_tol:
            break
        g = smooth_grad(x)
    else:
        raise SolverStallError(residual, max_iter)
    # 0 in d_x L(x, y) via support functions: every direction must see a
    # nonnegative support value.
    full = _subgrad_mu(P, x).translate(cy)
    worst = float((full.points @ direction_net(P.d1).T).max(axis=0).min())
    if worst < -MEMBERSHIP_TOL:
        raise SolverStallError(abs(worst), max_iter)
    return x


def dual_value(P: SaddleProblem, y, x0=None) -> float:
    """Dual objective Q_mu(y) = min_x L(x, y)."""
    lam = lambda_min(P, y, x0=x0)
    return lagrangian(P, lam, y)


def primal_drift(P: SaddleProblem) -> SetValuedMap:
    """Fast drift -(penalized subdifferential + C(s)^T y)."""
    cmax = max(
        float(np.linalg.norm(P.C[s], 2)) for s in range(P.alphabet)
    )
    growth = max(2 * P.growth_K + 1 + P.epsilon / P.radius**2, cmax)

    def evaluate(x, y, s):
        G = penalized_subgrad(P, x, s)
        return ConvexSet._trusted(-(G.points + P.C[s].T @ y))

    return SetValuedMap(
        dims=(P.d1, P.d2, P.d1), alphabet=P.alphabet,
        evaluate=evaluate, growth_K=growth,
    )


def dual_drift(P: SaddleProblem) -> SetValuedMap:
    """Slow drift {C(s) x - w(s)}, the observed constraint residual."""
    cmax = max(float(np.linalg.norm(P.C[s], 2)) for s in range(P.alphabet))
    wmax = float(np.abs(P.w).max(initial=0.0))
    return SetValuedMap(
        dims=(P.d1, P.d2, P.d2), alphabet=P.alphabet,
        evaluate=lambda x, y, s: ConvexSet.singleton(P.C[s] @ x - P.w[s]),
        growth_K=max(cmax, wmax, 1e-12),
    )


def dual_ode_field(P: SaddleProblem) -> MeanField:
    """Singleton dual flow field y -> {C_mu lambda(y) - w_mu}.

    Keeps a warm start across evaluations; the minimizer is unique, so the
    cache only changes iteration counts, not values.
    """
    C_mu, w_mu = P.C_mu, P.w_mu
    growth = float(np.linalg.norm(C_mu, 2)) * P.K_prime() + float(
        np.linalg.norm(w_mu)
    ) + 1e-12
    warm = {"x": None}

    def evaluate(y):
        lam = lambda_min(P, y, x0=warm["x"])
        warm["x"] = lam
        return ConvexSet.singleton(C_mu @ lam - w_mu)

    return MeanField(evaluate=evaluate, dim=P.d2, growth_K=growth, kind="slow")


def averaged_slow_field(P: SaddleProblem) -> MeanField:
    """Slow mean field built through the full averaging pipeline.

    Couples the minimizer map with the stationary polytope of the frozen
    kernel; on a uniquely ergodic chain this coincides with
    ``dual_ode_field`` and is the object the slow iterates track.
    """
    warm = {"x": None}

    def lambda_fn(y):
        lam = lambda_min(P, y, x0=warm["x"])
        warm["x"] = lam
        return lam[None, :]

    cmax = max(float(np.linalg.norm(P.C[s], 2)) for s in range(P.alphabet))
    wmax = float(np.abs(P.w).max(initial=0.0))
    growth = cmax * P.K_prime() + wmax + 1e-12
    return slow_field(dual_drift(P), P.kernel, lambda_fn, growth_K=growth)


def run_primal_dual(
    P: SaddleProblem,
    schedule: StepSchedule,
    N: int,
    seed: int,
    noise: Optional[NoiseModel] = None,
    x0=None,
    y0=None,
    s0: int = 0,
    selection_fast: str = "least_norm",
) -> Trajectory:
    """Primal-descent/dual-ascent recursion on one observed chain.

    Both updates read the same noise state; dual updates carry no additive
    noise unless a slow scale is passed explicitly.
    """
    if noise is None:
        noise = NoiseModel(kind="uniform", fast_scale=0.0, slow_scale=0.0)
    x0 = np.zeros(P.d1) if x0 is None else np.asarray(x0, dtype=float)
    y0 = np.zeros(P.d2) if y0 is None else np.asarray(y0, dtype=float)
    return run(
        primal_drift(P),
        dual_drift(P),
        P.kernel,
        P.kernel,
        schedule,
        x0,
        y0,
        s0,
        s0,
        N,
        seed,
        noise=noise,
        selection_fast=selection_fast,
        selection_slow="least_norm",
        share_noise_chain=True,
    )


@dataclass
class OptimalityReport:
    x_bar: np.ndarray
    y_bar: np.ndarray
    feasibility_gap: float
    primal_dual_gap: float
    dist_to_lambda: float
    eps_surplus: Optional[float] = None

    def lines(self) -> list[str]:
        out = [
            f"feasibility gap  |C_mu x - w_mu| = {self.feasibility_gap:.6g}",
            f"primal-dual gap  |J_mu-hat - Q_mu| = {self.primal_dual_gap:.6g}",
            f"distance to minimizer map = {self.dist_to_lambda:.6g}",
        ]
        if self.eps_surplus is not None:
            out.append(f"epsilon-optimality surplus = {self.eps_surplus:.6g}")
        return out


def optimality_report(
    P: SaddleProblem,
    traj: Trajectory,
    tail_fraction: float = 0.1,
    x_star=None,
) -> OptimalityReport:
    """Tail-mean optimality diagnostics of a primal-dual trajectory."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    n = traj.X.shape[0]
    start = min(n - 1, int(n * (1 - tail_fraction)))
    x_bar = traj.X[start:].mean(axis=0)
    y_bar = traj.Y[start:].mean(axis=0)
    lam = lambda_min(P, y_bar)
    report = OptimalityReport(
        x_bar=x_bar,
        y_bar=y_bar,
        feasibility_gap=float(np.linalg.norm(P.C_mu @ x_bar - P.w_mu)),
        primal_dual_gap=abs(P.Jhat_mu(x_bar) - lagrangian(P, lam, y_bar)),
        dist_to_lambda=float(np.linalg.norm(x_bar - lam)),
    )
    if x_star is not None:
        report.eps_surplus = P.J_mu(x_bar) - P.J_mu(np.asarray(x_star, dtype=float))
    return report


@dataclass
class EnvelopeReport:
    times: np.ndarray
    V: np.ndarray
    integral: np.ndarray
    max_discrepancy: float
    monotone_ok: bool


def verify_envelope(P: SaddleProblem, y_path: DIPath) -> EnvelopeReport:
    """Check V(t) = V(0) + integral of the squared dual residual.

    The dual value is recomputed at every knot of the path and compared to
    the trapezoid quadrature of ||C_mu lambda(y) - w_mu||^2 along it; the
    report carries the maximum discrepancy and whether V is nondecreasing.
    """
    C_mu, w_mu = P.C_mu, P.w_mu
    V = np.empty(len(y_path.times))
    resid2 = np.empty(len(y_path.times))
    warm = None
    for i, y in enumerate(y_path.states):
        lam = lambda_min(P, y, x0=warm)
        warm = lam
        V[i] = lagrangian(P, lam, y)
        resid2[i] = float(np.sum((C_mu @ lam - w_mu) ** 2))
    dt = np.diff(y_path.times)
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * dt * (resid2[:-1] + resid2[1:]))]
    )
    disc = float(np.abs(V - V[0] - integral).max())
    monotone = bool(np.all(np.diff(V) >= -1e-9))
    return EnvelopeReport(
        times=y_path.times, V=V, integral=integral,
        max_discrepancy=disc, monotone_ok=monotone,
    )
