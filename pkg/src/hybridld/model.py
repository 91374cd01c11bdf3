"""Stochastic hybrid (piecewise deterministic) model definition.

A model couples a scalar ODE ``dx/dt = F_n(x)`` to a continuous-time Markov
chain on K discrete states whose x-dependent transition rates are sped up
by 1/epsilon.  This module owns the frozen-x chain machinery: the generator
matrix, its invariant measure, the averaged vector field obtained by
weighting the per-state drifts with that measure, and the fixed points of
the averaged flow.

The chain is stored as a rate matrix (off-diagonal rates >= 0, zero row
sums), not as a jump kernel with a uniform clock; the two pictures agree
when every state's total rate equals one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .expr import ExprAst, compile_fn, evaluate

__all__ = [
    "ModelError",
    "DomainError",
    "RateSignError",
    "ReducibleChainError",
    "GeneratorMatrix",
    "HybridModel",
]


class ModelError(ValueError):
    """Model definition or evaluation violates its invariants."""


class DomainError(ModelError):
    """Continuous state outside the confinement interval."""


class RateSignError(ModelError):
    """A transition-rate expression evaluated to a negative number."""


class ReducibleChainError(ModelError):
    """The positive-rate graph is not strongly connected."""


@dataclass(frozen=True)
class GeneratorMatrix:
    """Rate matrix A(x) of the frozen-x chain: A_nm >= 0 off the diagonal
    and every row sums to zero."""

    matrix: np.ndarray
    x: float

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ModelError("generator must be square")
        off = a[~np.eye(a.shape[0], dtype=bool)]
        if off.size and off.min() < 0.0:
            raise RateSignError(f"negative off-diagonal rate at x={self.x}")
        rowsum = np.abs(a.sum(axis=1)).max() if a.size else 0.0
        if rowsum > 1e-12:
            raise ModelError(f"generator row sums deviate by {rowsum:.3e}")

    @property
    def k(self) -> int:
        return self.matrix.shape[0]


def _strongly_connected(adj: np.ndarray) -> bool:
    """Strong connectivity via reachability from node 0 in G and G^T."""

    def reaches_all(m: np.ndarray) -> bool:
        n = m.shape[0]
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.nonzero(m[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return bool(seen.all())

    return reaches_all(adj) and reaches_all(adj.T)


@dataclass(frozen=True)
class HybridModel:
    """Immutable model: K discrete states, per-state drift expressions,
    an x-dependent rate matrix, the timescale parameter epsilon, and
    optional per-state noise amplitudes for the piecewise-SDE variant.

    All expression evaluation is pure; instances are safe to share across
    threads.
    """

    k: int
    domain: tuple[float, float]
    epsilon: float
    drift: tuple[ExprAst, ...]
    rates: Mapping[tuple[int, int], ExprAst]  # 0-based (from, to), no diagonal
    params: Mapping[str, float] = field(default_factory=dict)
    sigma: tuple[ExprAst, ...] | None = None

    def __post_init__(self):
        if self.k < 2:
            raise ModelError("need at least two discrete states")
        if len(self.drift) != self.k:
            raise ModelError(f"expected {self.k} drift expressions, got {len(self.drift)}")
        if self.sigma is not None and len(self.sigma) != self.k:
            raise ModelError(f"expected {self.k} sigma expressions, got {len(self.sigma)}")
        a, b = self.domain
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ModelError(f"bad domain [{a}, {b}]")
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ModelError("epsilon must be positive and finite")
        for (n, m) in self.rates:
            if n == m:
                raise ModelError(f"diagonal rate entry ({n},{m}) not allowed")
            if not (0 <= n < self.k and 0 <= m < self.k):
                raise ModelError(f"rate entry ({n},{m}) out of range for K={self.k}")

    # -- compiled evaluators (built once, cached on the instance) ---------

    @cached_property
    def _drift_fns(self):
        return tuple(compile_fn(e, self.params) for e in self.drift)

    @cached_property
    def _sigma_fns(self):
        if self.sigma is None:
            return None
        return tuple(compile_fn(e, self.params) for e in self.sigma)

    @cached_property
    def _rate_fns(self):
        return {nm: compile_fn(e, self.params) for nm, e in self.rates.items()}

    @cached_property
    def _row_rates(self):
        """Per-state list of (destination, rate_fn) pairs, destination-sorted."""
        rows: list[list[tuple[int, object]]] = [[] for _ in range(self.k)]
        for (n, m), fn in sorted(self._rate_fns.items()):
            rows[n].append((m, fn))
        return tuple(tuple(r) for r in rows)

    # -- basic evaluation --------------------------------------------------

    def check_domain(self, x: float) -> None:
        a, b = self.domain
        if not (a <= x <= b):
            raise DomainError(f"x={x} outside domain [{a}, {b}]")

    def drift_at(self, x: float) -> np.ndarray:
        """Vector of per-state drifts F_n(x)."""
        return np.array([f(x) for f in self._drift_fns])

    def sigma_at(self, x: float) -> np.ndarray:
        if self._sigma_fns is None:
            raise ModelError("model has no noise amplitudes (sigma)")
        return np.array([f(x) for f in self._sigma_fns])

    def total_rate(self, n: int, x: float) -> float:
        """Total leave rate out of state n (before the 1/epsilon speed-up)."""
        return sum(fn(x) for _, fn in self._row_rates[n])

    def generator(self, x: float) -> GeneratorMatrix:
        """Rate matrix A(x); raises on x outside the domain or a negative
        evaluated rate (identifying the offending entry)."""
        self.check_domain(x)
        a = np.zeros((self.k, self.k))
        for (n, m), fn in self._rate_fns.items():
            v = fn(x)
            if v < 0.0:
                raise RateSignError(f"rate ({n + 1},{m + 1}) = {v} < 0 at x={x}")
            a[n, m] = v
        np.fill_diagonal(a, 0.0)
        np.fill_diagonal(a, -a.sum(axis=1))
        return GeneratorMatrix(a, x)

    def invariant_measure(self, x: float) -> np.ndarray:
        """Stationary distribution rho(x, .) of the frozen-x chain.

        Uses cancellation-free pivoted elimination (Grassmann-Taksar-
        Heyman) on the rate matrix, which keeps every component positive
        to relative accuracy even when the measure spans hundreds of
        orders of magnitude; verifies rho^T A = 0 to 1e-10.
        """
        a = self.generator(x).matrix
        w = a.copy()
        np.fill_diagonal(w, 0.0)
        scales = np.empty(self.k)
        for k in range(self.k - 1, 0, -1):
            s = w[k, :k].sum()
            if s <= 0.0:
                raise ReducibleChainError(
                    f"state {k} cannot reach lower-numbered states at x={x}"
                )
            scales[k] = s
            w[:k, :k] += np.outer(w[:k, k], w[k, :k]) / s
        rho = np.empty(self.k)
        rho[0] = 1.0
        for k in range(1, self.k):
            rho[k] = (rho[:k] @ w[:k, k]) / scales[k]
        rho /= rho.sum()
        resid = np.abs(rho @ a).max()
        if resid > 1e-10 or rho.min() <= 0.0:
            raise ReducibleChainError(
                f"no strictly positive invariant measure at x={x} "
                f"(residual {resid:.3e}, min component {rho.min():.3e})"
            )
        return rho

    def averaged_field(self, x: float) -> float:
        """Mean drift sum_n rho(x,n) F_n(x) driving the epsilon -> 0 limit."""
        return float(self.invariant_measure(x) @ self.drift_at(x))

    def fixed_points(self, grid_n: int = 2001) -> list[tuple[float, str]]:
        """Roots of the averaged field with stability tags.

        Scans a uniform grid for sign changes, refines each bracket by
        bisection (x tolerance 1e-12 relative to the domain scale), and
        classifies stability from a centered difference of the field.
        """
        if grid_n < 2:
            raise ModelError("grid_n must be >= 2")
        a, b = self.domain
        xs = np.linspace(a, b, grid_n)
        vals = np.array([self.averaged_field(x) for x in xs])
        scale = max(1.0, abs(a), abs(b))
        xtol = 1e-12 * scale
        roots: list[float] = []

        def bisect(lo: float, hi: float, flo: float) -> float:
            while hi - lo > xtol:
                mid = 0.5 * (lo + hi)
                fm = self.averaged_field(mid)
                if fm == 0.0:
                    return mid
                if (fm > 0) == (flo > 0):
                    lo, flo = mid, fm
                else:
                    hi = mid
            return 0.5 * (lo + hi)

        i = 0
        while i < grid_n:
            if vals[i] == 0.0:
                roots.append(xs[i])
                i += 1
                continue
            if i + 1 < grid_n and vals[i + 1] != 0.0 and (vals[i] > 0) != (vals[i + 1] > 0):
                roots.append(bisect(xs[i], xs[i + 1], vals[i]))
            i += 1

        out: list[tuple[float, str]] = []
        h = 1e-6 * scale
        for r in roots:
            lo = max(a, r - h)
            hi = min(b, r + h)
            slope = (self.averaged_field(hi) - self.averaged_field(lo)) / (hi - lo)
            out.append((r, "stable" if slope < 0 else "unstable"))
        return out

    # -- validation ---------------------------------------------------------

    def validation_grid(self, grid_n: int = 101) -> np.ndarray:
        a, b = self.domain
        return np.linspace(a, b, grid_n)

    def validate(self, grid_n: int = 101) -> None:
        """Check rate positivity and chain irreducibility on a grid of x
        values, raising the first violation found."""
        for x in self.validation_grid(grid_n):
            g = self.generator(x)  # raises RateSignError with location
            adj = (g.matrix > 0.0) & ~np.eye(self.k, dtype=bool)
            if not _strongly_connected(adj):
                raise ReducibleChainError(f"rate graph not strongly connected at x={x}")
        unknown = set()
        known = {"x"} | set(self.params)
        exprs = list(self.drift) + list(self.rates.values()) + list(self.sigma or ())
        from .expr import variables

        for e in exprs:
            unknown |= variables(e) - known
        if unknown:
            raise ModelError(f"undeclared parameter(s): {sorted(unknown)}")

    def eval_expr(self, e: ExprAst, x: float) -> float:
        return evaluate(e, x, self.params)
