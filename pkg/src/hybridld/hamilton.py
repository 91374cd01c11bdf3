"""Hamiltonian flow, the zero-energy escape branch, and the quasipotential.

The quasipotential Phi solves lambda(x, Phi'(x)) = 0 on the nontrivial
branch.  Between fixed points of the averaged field the equation has
exactly one root p*(x) != 0 (by convexity of lambda in p, with slope
Fbar(x) at p = 0), and the quasipotential is the line integral of p*.
Escape from a stable fixed point x- across the adjacent unstable point x0
happens at mean time ~ exp([Phi(x0) - Phi(x-)]/epsilon); this module
computes that exponent.  Profiles stop at fixed points: continuation of
the branch through x0 into the far basin is out of scope.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .model import HybridModel
from .perron import SpectralSolution, dlambda_dp, hamiltonian, perron_weighted

__all__ = [
    "DegenerateRootError",
    "BracketError",
    "InteriorFixedPointError",
    "NotBistableError",
    "QuadratureCheckError",
    "PhasePoint",
    "FlowResult",
    "QuasipotentialProfile",
    "EscapeExponent",
    "flow",
    "zero_energy_momentum",
    "quasipotential",
    "escape_exponent",
]


class DegenerateRootError(RuntimeError):
    """Fbar(x) = 0: the two zero-energy branches coalesce at p = 0."""


class BracketError(RuntimeError):
    """Could not bracket the nontrivial zero-energy momentum."""


class InteriorFixedPointError(RuntimeError):
    """A fixed point lies strictly inside the requested profile interval."""


class NotBistableError(RuntimeError):
    """Escape exponent requires at least stable/unstable/stable structure."""


class QuadratureCheckError(RuntimeError):
    """Grid-doubling (Richardson) consistency check failed."""


@dataclass(frozen=True)
class PhasePoint:
    x: float
    p: float
    t: float
    energy: float  # lambda(x, p) at this point


@dataclass(frozen=True)
class FlowResult:
    points: list[PhasePoint]
    exited_domain: bool


@dataclass(frozen=True)
class QuasipotentialProfile:
    """Zero-energy momentum p*(x_i) and cumulative Phi_i = integral of p*
    from the anchor (trapezoid rule); Phi[0] == 0."""

    x: np.ndarray
    p_star: np.ndarray
    phi: np.ndarray

    @property
    def delta_phi(self) -> float:
        return float(self.phi[-1])


@dataclass(frozen=True)
class EscapeExponent:
    x_minus: float
    x0: float
    delta_phi: float


class _Field:
    """Hamiltonian vector field (dlambda/dp, -dlambda/dx) with warm-started
    spectral solves and a per-x cache of the generator and drift vector
    (root finding in p hammers the same x repeatedly)."""

    def __init__(self, model: HybridModel):
        self.model = model
        self._guess: SpectralSolution | None = None
        self._x: float | None = None
        self._a = None
        self._f = None

    def solve(self, x: float, p: float) -> SpectralSolution:
        if x != self._x:
            self._a = self.model.generator(x)
            self._f = self.model.drift_at(x)
            self._x = x
        g = self._guess
        sol = perron_weighted(self._a, p * self._f,
                              r0=None if g is None else g.R,
                              z0=None if g is None else g.z)
        self._guess = sol
        return sol

    def lam(self, x: float, p: float) -> float:
        return self.solve(x, p).lam

    def rhs(self, x: float, p: float) -> tuple[float, float]:
        sol = self.solve(x, p)
        xdot = dlambda_dp(sol, self._f)
        h = 1e-6 * max(1.0, abs(x))
        pdot = -(self.lam(x + h, p) - self.lam(x - h, p)) / (2.0 * h)
        return xdot, pdot


def flow(model: HybridModel, x0: float, p0: float, T: float, dt: float) -> FlowResult:
    """Classical RK4 integration of Hamilton's equations from (x0, p0).

    Stops early (with the exit flag set) as soon as the finite-difference
    stencil around x would leave the domain.  Energy lambda(x, p) is
    recorded at every accepted point; it is conserved up to integrator
    error since the Hamiltonian is autonomous.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (np.isfinite(x0) and np.isfinite(p0)):
        raise ValueError("non-finite initial phase point")
    a, b = model.domain
    fld = _Field(model)
    margin = 2e-6 * max(1.0, max(abs(a), abs(b)))

    def inside(x: float) -> bool:
        return a + margin <= x <= b - margin

    pts = [PhasePoint(x0, p0, 0.0, fld.lam(x0, p0))]
    x, p, t = x0, p0, 0.0
    exited = not inside(x0)
    n_steps = int(round(T / dt))
    for _ in range(n_steps):
        if exited:
            break
        k1x, k1p = fld.rhs(x, p)
        if not inside(x + 0.5 * dt * k1x):
            exited = True
            break
        k2x, k2p = fld.rhs(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
        if not inside(x + 0.5 * dt * k2x):
            exited = True
            break
        k3x, k3p = fld.rhs(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
        if not inside(x + dt * k3x):
            exited = True
            break
        k4x, k4p = fld.rhs(x + dt * k3x, p + dt * k3p)
        x = x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        p = p + dt * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
        t += dt
        if not (np.isfinite(x) and np.isfinite(p)):
            raise RuntimeError(f"non-finite state at t={t}")
        if not inside(x):
            exited = True
            break
        pts.append(PhasePoint(x, p, t, fld.lam(x, p)))
    return FlowResult(pts, exited)


def zero_energy_momentum(
    model: HybridModel,
    x: float,
    guess: float | None = None,
    _field: _Field | None = None,
    _fbar: float | None = None,
) -> float:
    """The nontrivial root p* != 0 of lambda(x, p) = 0.

    lambda is convex in p with lambda(x, 0) = 0 and slope Fbar(x) there,
    so p* carries the sign opposite to Fbar(x).  The root is bracketed by
    geometric expansion (or shrinkage, when |p*| is small near a fixed
    point) starting from sign * 1e-3 -- or tightly around `guess` when a
    neighbouring root is known -- then polished by Brent to a p tolerance
    of 1e-14; the residual must satisfy |lambda| <= 1e-12.
    """
    fld = _field or _Field(model)
    fbar = model.averaged_field(x) if _fbar is None else _fbar
    if fbar == 0.0:
        raise DegenerateRootError(f"averaged field vanishes at x={x}")
    s = -1.0 if fbar > 0 else 1.0

    def g(t: float) -> float:
        # lambda along the branch direction: negative before the root,
        # positive past it
        return fld.lam(x, s * t)

    if guess:
        t_lo, t_hi = abs(guess) * 0.99, abs(guess) * 1.01
    else:
        t_lo = t_hi = 1e-3
    v_lo = g(t_lo)
    if v_lo == 0.0:
        return s * t_lo
    if v_lo > 0.0:
        # root below t_lo: shrink geometrically
        hi, v_hi = t_lo, v_lo
        for _ in range(200):
            t2 = 0.5 * hi
            v2 = g(t2)
            if v2 <= 0.0:
                if v2 == 0.0:
                    return s * t2
                return s * _brent_polish(g, t2, hi)
            hi = t2
        raise BracketError(f"no sign change while shrinking from p={s * t_lo} at x={x}")
    v_hi = g(t_hi) if t_hi != t_lo else v_lo
    lo = t_hi
    if v_hi > 0.0:
        return s * _brent_polish(g, t_lo, t_hi)
    if v_hi == 0.0:
        return s * t_hi
    for _ in range(200):
        t2 = 2.0 * lo
        v2 = g(t2)
        if v2 >= 0.0:
            if v2 == 0.0:
                return s * t2
            return s * _brent_polish(g, lo, t2)
        lo = t2
    raise BracketError(f"no sign change while expanding from p={s * t_hi} at x={x}")


def _brent_polish(f, p_neg: float, p_pos: float) -> float:
    lo, hi = (p_neg, p_pos) if p_neg < p_pos else (p_pos, p_neg)
    root = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    resid = f(root)
    if abs(resid) > 1e-12:
        raise BracketError(f"zero-energy residual {resid:.3e} exceeds 1e-12 at p={root}")
    return float(root)


_FIXED_POINT_TOL = 1e-8  # |Fbar| below this marks a fixed-point endpoint


def _profile(model: HybridModel, x_anchor: float, x_to: float, n_grid: int) -> QuasipotentialProfile:
    xs = np.linspace(x_anchor, x_to, n_grid)
    fld = _Field(model)
    ps = np.empty(n_grid)
    fbars = np.array([model.averaged_field(x) for x in xs])
    interior = fbars[1:-1]
    if interior.size and (np.abs(interior) < _FIXED_POINT_TOL).any():
        bad = xs[1:-1][np.abs(interior) < _FIXED_POINT_TOL][0]
        raise InteriorFixedPointError(f"fixed point at x={bad} inside the profile interval")
    if interior.size and (np.sign(interior) != np.sign(interior[0])).any():
        raise InteriorFixedPointError("averaged field changes sign inside the profile interval")
    prev: float | None = None
    for i, x in enumerate(xs):
        if abs(fbars[i]) <= _FIXED_POINT_TOL:
            ps[i] = 0.0  # both branches meet at fixed points
            continue
        ps[i] = zero_energy_momentum(model, x, guess=prev, _field=fld, _fbar=fbars[i])
        prev = ps[i]
    dx = np.diff(xs)
    phi = np.concatenate([[0.0], np.cumsum(0.5 * (ps[1:] + ps[:-1]) * dx)])
    return QuasipotentialProfile(xs, ps, phi)


def quasipotential(
    model: HybridModel,
    x_anchor: float,
    x_to: float,
    n_grid: int,
    richardson_check: bool = True,
) -> QuasipotentialProfile:
    """Quasipotential profile on a uniform grid from x_anchor to x_to.

    The anchor is the zero of Phi.  Endpoints at fixed points of the
    averaged field get p* = 0 exactly (one-sided limit); an interior fixed
    point is an error since the branch is only defined between them.
    Unless disabled, a grid-doubling check verifies that the endpoint
    Phi changes by at most 1e-6 relative (plus 1e-10 absolute).
    """
    if n_grid < 16:
        raise ValueError("n_grid must be >= 16")
    if x_anchor == x_to:
        raise ValueError("empty profile interval")
    prof = _profile(model, x_anchor, x_to, n_grid)
    if richardson_check:
        fine = _profile(model, x_anchor, x_to, 2 * n_grid - 1)
        err = abs(fine.delta_phi - prof.delta_phi)
        if err > 1e-6 * abs(fine.delta_phi) + 1e-10:
            raise QuadratureCheckError(
                f"grid doubling moved Phi by {err:.3e}; increase n_grid"
            )
    return prof


def escape_exponent(model: HybridModel, n_grid: int = 2049) -> EscapeExponent:
    """Arrhenius exponent for escape from the leftmost stable fixed point
    x- across the adjacent unstable point x0: DeltaPhi = Phi(x0) - Phi(x-)
    with Phi anchored at x-."""
    fps = model.fixed_points()
    if len(fps) < 3:
        raise NotBistableError(f"found {len(fps)} fixed point(s); need >= 3")
    stable = [x for x, kind in fps if kind == "stable"]
    if not stable:
        raise NotBistableError("no stable fixed point")
    x_minus = stable[0]
    after = [(x, kind) for x, kind in fps if x > x_minus]
    if not after or after[0][1] != "unstable":
        raise NotBistableError("no adjacent unstable fixed point to the right")
    x0 = after[0][0]
    prof = quasipotential(model, x_minus, x0, n_grid)
    dphi = prof.delta_phi
    if dphi < 0:
        warnings.warn(f"negative escape exponent {dphi}; check model scales")
    return EscapeExponent(x_minus, x0, dphi)
