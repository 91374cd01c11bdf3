"""Perron eigenvalue solver for the tilted generator.

The large-deviation Hamiltonian of a stochastic hybrid system is the
dominant (Perron) eigenvalue lambda(x, p) of A(x) + diag(p F(x)), where
A is the frozen-x rate matrix and F the vector of per-state drifts.  This
module computes the full spectral triple: lambda, the positive right
eigenvector R, the positive left eigenvector z, and the occupation
measure psi = z * R (componentwise), normalized so that sum(R) = 1 and
<z, R> = 1.

Algorithm: shift by kappa = max |diag| + 1 so M + kappa*I is nonnegative,
irreducible and has a strictly positive diagonal (hence primitive), then
run power iteration on M and M^T.  The reported eigenvalue is the
two-sided Rayleigh quotient z^T M R / z^T R, whose error is quadratic in
the eigenvector residuals, minus the shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GeneratorMatrix, HybridModel, ReducibleChainError, _strongly_connected

__all__ = [
    "PerronConvergenceError",
    "SpectralSolution",
    "perron_weighted",
    "hamiltonian",
    "hamiltonian_sde",
    "dlambda_dp",
    "dlambda_dx",
    "lambda_hessian_q",
]

MAX_ITERATIONS = 100_000
_POW = 16  # effective power-iteration steps applied between residual checks


class PerronConvergenceError(RuntimeError):
    """Power iteration failed to reach tolerance within the budget."""


@dataclass(frozen=True)
class SpectralSolution:
    """Perron triple of A + diag(w): eigenvalue `lam`, right/left positive
    eigenvectors `R` and `z` (sum(R) = 1, z.R = 1), occupation measure
    `psi` = z*R, plus iteration count and the eigen-residual actually
    achieved (max over the two sides, infinity norm)."""

    lam: float
    R: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    iterations: int
    residual: float


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, GeneratorMatrix):
        return a.matrix
    return np.asarray(a, dtype=float)


_last_pattern: tuple[int, bytes] | None = None


def _check_irreducible(A: np.ndarray, k: int) -> None:
    """Strong-connectivity check on the positive entry pattern (self-loops
    are harmless for reachability), memoizing the last verified pattern
    since sweeps in x or p rarely change it."""
    global _last_pattern
    adj = A > 0.0
    key = (k, adj.tobytes())
    if key == _last_pattern:
        return
    if not _strongly_connected(adj):
        raise ReducibleChainError("matrix is not irreducible")
    _last_pattern = key


def _power_side(
    mat: np.ndarray, mat_pow: np.ndarray, v0: np.ndarray, tol: float
) -> tuple[np.ndarray, int, float]:
    """Power iteration for the dominant eigenvector of the nonnegative
    matrix `mat`; `mat_pow` is a positive scalar multiple of mat**_POW, so
    each application advances _POW steps while the residual (and the
    Rayleigh-quotient eigenvalue estimate) is always measured against
    `mat` itself."""
    v = np.maximum(v0, 1e-300)
    v = v / v.sum()
    iters = 0
    while True:
        w = mat @ v
        theta = (v @ w) / (v @ v)
        res = np.abs(w - theta * v).max()
        if res <= tol:
            return v, iters, res
        if iters >= MAX_ITERATIONS:
            raise PerronConvergenceError(
                f"power iteration stalled at residual {res:.3e} (tolerance {tol:.3e})"
            )
        w = mat_pow @ v
        s = w.sum()
        if not np.isfinite(s) or s <= 0.0:
            raise PerronConvergenceError("power iterate lost positivity")
        v = w / s
        iters += _POW


def perron_weighted(a, w, r0: np.ndarray | None = None, z0: np.ndarray | None = None) -> SpectralSolution:
    """Perron pair of M = A + diag(w) for an irreducible matrix A with
    nonnegative off-diagonal entries and a finite weight vector w.

    Optional `r0`/`z0` warm-start the right/left iterations (useful when
    sweeping x or p); they do not change the result beyond the stated
    tolerance.
    """
    trusted = isinstance(a, GeneratorMatrix)  # off-diagonals already validated
    A = _as_matrix(a)
    k = A.shape[0]
    w = np.asarray(w, dtype=float)
    if w.shape != (k,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({k},)")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite entries in the weight vector")
    if not trusted:
        if not np.all(np.isfinite(A)):
            raise ValueError("non-finite entries in the matrix")
        off = A[~np.eye(k, dtype=bool)]
        if off.size and off.min() < 0.0:
            raise ValueError("off-diagonal entries must be nonnegative")

    if k == 1:
        lam = float(A[0, 0] + w[0])
        one = np.ones(1)
        return SpectralSolution(lam, one.copy(), one.copy(), one.copy(), 0, 0.0)

    _check_irreducible(A, k)

    step = k + 1  # flat stride hitting the diagonal
    Mk = A.copy()
    Mk.flat[::step] += w
    kappa = np.abs(Mk.flat[::step]).max() + 1.0
    Mk.flat[::step] += kappa
    norm_m = np.abs(Mk).sum(axis=1).max()
    tol = max(min(1e-13 * norm_m, 1e-10), 1e-15 * norm_m)
    m1 = Mk / norm_m  # unit scale so high powers cannot overflow
    m2 = m1 @ m1
    m4 = m2 @ m2
    m16 = m4 @ m4
    m16 = m16 @ m16

    start = np.full(k, 1.0 / k)
    R, it_r, res_r = _power_side(Mk, m16, start if r0 is None else np.asarray(r0, dtype=float), tol)
    z, it_z, res_z = _power_side(Mk.T, m16.T, start if z0 is None else np.asarray(z0, dtype=float), tol)

    lam = float((z @ (Mk @ R)) / (z @ R) - kappa)
    R = R / R.sum()
    z = z / (z @ R)
    psi = z * R
    return SpectralSolution(lam, R, z, psi, it_r + it_z, max(res_r, res_z))


def hamiltonian(
    model: HybridModel, x: float, p: float, guess: SpectralSolution | None = None
) -> SpectralSolution:
    """Hamiltonian H(x, p): Perron solution of A(x) + diag(p F(x))."""
    A = model.generator(x)
    w = p * model.drift_at(x)
    if guess is None:
        return perron_weighted(A, w)
    return perron_weighted(A, w, r0=guess.R, z0=guess.z)


def hamiltonian_sde(
    model: HybridModel, x: float, p: float, guess: SpectralSolution | None = None
) -> SpectralSolution:
    """Hamiltonian of the piecewise-SDE variant: the diagonal weight gains
    the Freidlin-Wentzell term p^2 sigma_n(x)^2 / 2."""
    A = model.generator(x)
    s = model.sigma_at(x)
    w = p * model.drift_at(x) + 0.5 * p * p * s * s
    if guess is None:
        return perron_weighted(A, w)
    return perron_weighted(A, w, r0=guess.R, z0=guess.z)


def dlambda_dp(sol: SpectralSolution, f: np.ndarray) -> float:
    """Exact derivative of the eigenvalue in the tilt direction:
    d lambda / dp = sum_n psi_n F_n (no finite differences)."""
    f = np.asarray(f, dtype=float)
    if f.shape != sol.psi.shape:
        raise ValueError(f"drift vector has shape {f.shape}, expected {sol.psi.shape}")
    return float(sol.psi @ f)


def dlambda_dx(
    model: HybridModel,
    x: float,
    p: float,
    guess: SpectralSolution | None = None,
) -> float:
    """Centered finite difference of lambda in x with step
    h = 1e-6 * max(1, |x|); both x +- h must lie inside the domain."""
    h = 1e-6 * max(1.0, abs(x))
    hi = hamiltonian(model, x + h, p, guess=guess)
    lo = hamiltonian(model, x - h, p, guess=guess)
    return (hi.lam - lo.lam) / (2.0 * h)


def lambda_hessian_q(a, q, step: float = 1e-5) -> np.ndarray:
    """Hessian of lambda with respect to the first K-1 diagonal weights
    (the K-th is pinned to zero), via centered differences of the exact
    gradient psi; returned symmetrized as (D + D^T)/2.

    Positive definiteness of this matrix is what makes the q <-> psi
    change of variables invertible.
    """
    A = _as_matrix(a)
    k = A.shape[0]
    q = np.asarray(q, dtype=float)
    if q.shape != (k - 1,):
        raise ValueError(f"q has shape {q.shape}, expected ({k - 1},)")

    def psi_at(qv: np.ndarray) -> np.ndarray:
        w = np.append(qv, 0.0)
        return perron_weighted(A, w).psi[: k - 1]

    d = np.empty((k - 1, k - 1))
    for j in range(k - 1):
        e = np.zeros(k - 1)
        e[j] = step
        d[:, j] = (psi_at(q + e) - psi_at(q - e)) / (2.0 * step)
    return 0.5 * (d + d.T)
