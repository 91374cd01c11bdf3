"""Rate-function machinery: occupation-measure cost, convex duality between
diagonal tilts q and occupation measures psi, the Lagrangian as a Legendre
transform of the Perron Hamiltonian, and path actions.

The cost of holding an occupation measure psi at position x is

    j(x, psi) = sum_{n<K} q_n psi_n - lambda(x, Q),

evaluated at the unique tilt q (with q_K pinned to 0) whose spectral
occupation measure matches psi.  That q is found by minimizing the smooth
convex function lambda(x, Q) - <q, psi> with damped Newton steps; its
gradient is psi(q) - psi and its Hessian is the positive definite
lambda Hessian, so the optimum is the exact dual pairing.  j >= 0 with
equality exactly at the invariant measure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import HybridModel
from .perron import dlambda_dp, hamiltonian, hamiltonian_sde, lambda_hessian_q, perron_weighted

__all__ = [
    "BoundaryMeasureError",
    "NewtonConvergenceError",
    "UnreachableVelocityError",
    "ConditionWarning",
    "PathSample",
    "SdeLagrangian",
    "project_interior",
    "as_occupation",
    "j_cost",
    "q_from_psi",
    "psi_from_q",
    "balance_certificate",
    "lagrangian",
    "action",
    "lagrangian_sde",
]


class BoundaryMeasureError(ValueError):
    """psi touches the simplex boundary; the dual tilt diverges there."""


class NewtonConvergenceError(RuntimeError):
    pass


class UnreachableVelocityError(ValueError):
    """Requested velocity outside the open reachable range (min F, max F)."""


class ConditionWarning(UserWarning):
    """Velocity inversion requested where the drifts nearly coincide."""


@dataclass(frozen=True)
class PathSample:
    """Sampled continuous path: strictly increasing times starting at 0."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        if t.ndim != 1 or t.shape != x.shape or t.size < 2:
            raise ValueError("need matching 1-d time/position arrays with >= 2 samples")
        if not (np.isfinite(t).all() and np.isfinite(x).all()):
            raise ValueError("non-finite path samples")
        if t[0] != 0.0:
            raise ValueError("path time must start at 0")
        if not (np.diff(t) > 0).all():
            raise ValueError("path times must be strictly increasing")


@dataclass(frozen=True)
class SdeLagrangian:
    L: float
    p: float
    mu: float        # psi-averaged drift at the optimum
    sigma_sq: float  # psi-averaged squared noise amplitude


def project_interior(psi, delta: float = 1e-9) -> np.ndarray:
    """Pull a boundary-touching measure into the open simplex:
    (1 - delta) psi + delta * uniform."""
    psi = np.asarray(psi, dtype=float)
    return (1.0 - delta) * psi + delta / psi.size


def as_occupation(psi, strict: bool = True) -> np.ndarray:
    """Validate simplex membership (sum 1 within 1e-12, nonnegative);
    with strict=True additionally require strictly positive entries."""
    psi = np.asarray(psi, dtype=float)
    if abs(psi.sum() - 1.0) > 1e-12 or psi.min() < 0.0:
        raise ValueError(f"not an occupation measure: sum={psi.sum()!r}, min={psi.min()!r}")
    if strict and psi.min() <= 0.0:
        raise BoundaryMeasureError(
            "occupation measure touches the simplex boundary; "
            "use project_interior() first if an approximation is acceptable"
        )
    return psi


def _solve_q(a: np.ndarray, psi: np.ndarray, max_iter: int = 200) -> tuple[np.ndarray, float]:
    """Minimize G(q) = lambda(Q) - <q, psi> over q in R^{K-1} (Q_K = 0).

    Returns (q*, G(q*)) with gradient norm <= 1e-10 at exit.  Newton steps
    use the exact-gradient Hessian; backtracking halves the step until G
    decreases, falling back to plain gradient steps after five halvings.
    """
    k = a.shape[0]
    target = psi[: k - 1]
    q = np.zeros(k - 1)

    def value_grad(qv: np.ndarray) -> tuple[float, np.ndarray]:
        sol = perron_weighted(a, np.append(qv, 0.0))
        return sol.lam - qv @ target, sol.psi[: k - 1] - target

    g_val, grad = value_grad(q)
    for _ in range(max_iter):
        if np.abs(grad).max() <= 1e-10:
            return q, g_val
        hess = lambda_hessian_q(a, q)
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -grad
        t = 1.0
        for halving in range(6):
            q_new = q + t * step
            new_val, new_grad = value_grad(q_new)
            if new_val < g_val:
                break
            t *= 0.5
        else:
            # gradient fallback with its own backtracking
            t = 1.0
            for _ in range(40):
                q_new = q - t * grad
                new_val, new_grad = value_grad(q_new)
                if new_val < g_val:
                    break
                t *= 0.5
            else:
                raise NewtonConvergenceError("no descent direction makes progress")
        q, g_val, grad = q_new, new_val, new_grad
    if np.abs(grad).max() <= 1e-10:
        return q, g_val
    raise NewtonConvergenceError(
        f"gradient norm {np.abs(grad).max():.3e} after {max_iter} iterations"
    )


def j_cost(model: HybridModel, x: float, psi) -> tuple[float, np.ndarray]:
    """Occupation-measure cost j(x, psi) >= 0 and the optimal tilt q*.

    psi must lie strictly inside the simplex; j = 0 exactly when psi is
    the invariant measure rho(x, .).
    """
    psi = as_occupation(psi, strict=True)
    a = model.generator(x).matrix
    if psi.shape != (model.k,):
        raise ValueError(f"psi has shape {psi.shape}, expected ({model.k},)")
    q, g_val = _solve_q(a, psi)
    return -g_val, q


def q_from_psi(model: HybridModel, x: float, psi) -> np.ndarray:
    """Tilt vector q (length K-1) whose spectral occupation measure is psi."""
    psi = as_occupation(psi, strict=True)
    a = model.generator(x).matrix
    q, _ = _solve_q(a, psi)
    return q


def psi_from_q(model: HybridModel, x: float, q) -> np.ndarray:
    """Occupation measure of the tilted generator A + diag(q_1..q_{K-1}, 0)."""
    q = np.asarray(q, dtype=float)
    a = model.generator(x).matrix
    if q.shape != (model.k - 1,):
        raise ValueError(f"q has shape {q.shape}, expected ({model.k - 1},)")
    return perron_weighted(a, np.append(q, 0.0)).psi


def balance_certificate(a, q) -> float:
    """Supremum certificate at the spectral optimum: with the uniformized
    kernel W = I + A/c (c = largest total rate) and c_nm = psi_n W_nm, the
    per-state balance sum_m c_nm R_m/R_n = sum_m c_mn R_n/R_m must hold.
    Returns the largest absolute mismatch over states."""
    A = np.asarray(a, dtype=float) if not hasattr(a, "matrix") else a.matrix
    k = A.shape[0]
    sol = perron_weighted(A, np.append(np.asarray(q, dtype=float), 0.0))
    c = max(-np.diag(A).min(), 1.0)
    W = np.eye(k) + A / c
    cmat = sol.psi[:, None] * W
    lhs = (cmat * (sol.R[None, :] / sol.R[:, None])).sum(axis=1)
    rhs = (cmat.T * (sol.R[:, None] / sol.R[None, :]).T).sum(axis=0)
    return float(np.abs(lhs - rhs).max())


def _invert_velocity(vel_fn, v: float, lo0: float = 1.0) -> float:
    """Bisection on the strictly increasing map mu -> vel(mu), with
    geometric bracket expansion; stops at velocity residual 1e-12."""
    lo, hi = -lo0, lo0
    for _ in range(200):
        if vel_fn(lo) < v:
            break
        lo *= 2.0
    else:
        raise UnreachableVelocityError(f"velocity {v} not bracketed from below")
    for _ in range(200):
        if vel_fn(hi) > v:
            break
        hi *= 2.0
    else:
        raise UnreachableVelocityError(f"velocity {v} not bracketed from above")
    mid = 0.5 * (lo + hi)
    for _ in range(400):
        vm = vel_fn(mid)
        if abs(vm - v) <= 1e-12:
            return mid
        if vm < v:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
    raise UnreachableVelocityError(
        f"velocity residual {abs(vel_fn(mid) - v):.3e} > 1e-12 at mu={mid}"
    )


def lagrangian(model: HybridModel, x: float, v: float) -> tuple[float, float]:
    """Large-deviation Lagrangian L(x, v) and the conjugate momentum mu.

    mu solves d lambda/dp (x, mu) = v, which is strictly monotone by
    convexity with range (min_n F_n, max_n F_n); v must lie strictly
    inside that interval.  L = mu*v - lambda(x, mu) >= 0, vanishing only
    at v = Fbar(x).
    """
    f = model.drift_at(x)
    lo, hi = f.min(), f.max()
    if hi - lo < 1e-12:
        warnings.warn(
            f"drift components nearly coincide at x={x}; inversion is ill-conditioned",
            ConditionWarning,
        )
    if not (lo < v < hi):
        raise UnreachableVelocityError(
            f"v={v} outside the reachable range ({lo}, {hi}) at x={x}"
        )

    state: dict = {"sol": None}

    def vel(mu: float) -> float:
        sol = hamiltonian(model, x, mu, guess=state["sol"])
        state["sol"] = sol
        return dlambda_dp(sol, f)

    mu = _invert_velocity(vel, v)
    lam = hamiltonian(model, x, mu, guess=state["sol"]).lam
    return mu * v - lam, mu


def action(model: HybridModel, path: PathSample) -> float:
    """Path action: sum of L(x_mid, v_seg) * dt over segments, with the
    segment velocity from finite differences.  Zero (to integrator
    accuracy) exactly on averaged-flow paths."""
    t, x = path.t, path.x
    dts = np.diff(t)
    vs = np.diff(x) / dts
    mids = 0.5 * (x[1:] + x[:-1])
    total = 0.0
    for i, (xm, v, dt) in enumerate(zip(mids, vs, dts)):
        try:
            li, _ = lagrangian(model, float(xm), float(v))
        except UnreachableVelocityError as e:
            raise UnreachableVelocityError(f"segment {i}: {e}") from None
        total += li * dt
    return total


def lagrangian_sde(model: HybridModel, x: float, v: float) -> SdeLagrangian:
    """Legendre transform of the sigma-augmented Hamiltonian.

    Solves d lambda/dp = sum_n psi_n (F_n + p sigma_n^2) = v; with any
    nonzero noise the velocity range is all of R.  Also reports the
    optimal measure's drift mu = sum psi_n F_n and noise variance
    sigma^2 = sum psi_n sigma_n^2 (so p = (v - mu)/sigma^2 when
    sigma^2 > 0).
    """
    f = model.drift_at(x)
    s2 = model.sigma_at(x) ** 2
    state: dict = {"sol": None}

    def vel(p: float) -> float:
        sol = hamiltonian_sde(model, x, p, guess=state["sol"])
        state["sol"] = sol
        return float(sol.psi @ (f + p * s2))

    p = _invert_velocity(vel, v)
    sol = hamiltonian_sde(model, x, p, guess=state["sol"])
    mu = float(sol.psi @ f)
    sigma_sq = float(sol.psi @ s2)
    return SdeLagrangian(p * v - sol.lam, p, mu, sigma_sq)
