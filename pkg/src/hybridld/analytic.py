"""Closed-form oracles for the two exactly solvable model families and the
K=2 worked example, transcribed directly from the printed formulas.

These never call the generic spectral solver; the test suite uses them as
independent trust anchors for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import Bin, ExprAst, Num, evaluate, parse
from .model import HybridModel

__all__ = [
    "BinaryParams",
    "IonChannelParams",
    "binary_lambda",
    "binary_psi",
    "binary_model",
    "ionchannel_lambda",
    "ionchannel_phi_prime",
    "ionchannel_trial_z",
    "ionchannel_model",
    "appendix_example_matrix",
    "appendix_lambda",
    "appendix_psi",
    "sodium_channel_params",
]


@dataclass(frozen=True)
class BinaryParams:
    """Two-state chain 0 <-> 1 with rates omega_plus (0 -> 1) and
    omega_minus (1 -> 0), and per-state drifts F0, F1."""

    omega_plus: ExprAst
    omega_minus: ExprAst
    f0: ExprAst
    f1: ExprAst
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_strings(cls, omega_plus: str, omega_minus: str, f0: str, f1: str,
                     params: Mapping[str, float] | None = None) -> "BinaryParams":
        return cls(parse(omega_plus), parse(omega_minus), parse(f0), parse(f1),
                   dict(params or {}))

    def at(self, x: float) -> tuple[float, float, float, float]:
        ev = lambda e: evaluate(e, x, self.params)
        return ev(self.omega_plus), ev(self.omega_minus), ev(self.f0), ev(self.f1)


def binary_lambda(bp: BinaryParams, x: float, p: float) -> float:
    """Perron eigenvalue of the binary model,
    lambda = (Sigma + sqrt(Sigma^2 - 4*gamma)) / 2 with
    Sigma = p(F0+F1) - (w+ + w-) and
    gamma = (p F1 - w-)(p F0 - w+) - w- w+.

    The discriminant equals [p(F0-F1) - (w+ - w-)]^2 + 4 w+ w- and is
    therefore always positive.
    """
    wp, wm, f0, f1 = bp.at(x)
    sig = p * (f0 + f1) - (wp + wm)
    gam = (p * f1 - wm) * (p * f0 - wp) - wm * wp
    disc = sig * sig - 4.0 * gam
    if disc < 0.0:
        raise ValueError(f"negative discriminant {disc} at (x={x}, p={p})")
    return 0.5 * (sig + math.sqrt(disc))


def binary_psi(bp: BinaryParams, x: float, p: float) -> tuple[float, float]:
    """Occupation measure (psi0, psi1) = (1 +- u/sqrt(D))/2 with
    u = p(F0-F1) - (w+ - w-) and D the discriminant of binary_lambda."""
    wp, wm, f0, f1 = bp.at(x)
    u = p * (f0 - f1) - (wp - wm)
    d = u * u + 4.0 * wp * wm
    r = u / math.sqrt(d)
    return 0.5 * (1.0 + r), 0.5 * (1.0 - r)


def binary_model(bp: BinaryParams, domain: tuple[float, float], epsilon: float) -> HybridModel:
    """HybridModel carrying the same expressions, for cross-checking the
    generic machinery against the closed forms above."""
    return HybridModel(
        k=2,
        domain=domain,
        epsilon=epsilon,
        drift=(bp.f0, bp.f1),
        rates={(0, 1): bp.omega_plus, (1, 0): bp.omega_minus},
        params=dict(bp.params),
    )


@dataclass(frozen=True)
class IonChannelParams:
    """Birth-death chain of N two-state channels: state n (open count)
    gains at rate alpha(x) (N-n) and loses at rate beta(x) n; the voltage
    drifts with F_n = (n/N) f(x) - g(x)."""

    n_channels: int
    alpha: ExprAst
    beta: ExprAst
    f: ExprAst
    g: ExprAst
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_strings(cls, n_channels: int, alpha: str, beta: str, f: str, g: str,
                     params: Mapping[str, float] | None = None) -> "IonChannelParams":
        return cls(n_channels, parse(alpha), parse(beta), parse(f), parse(g),
                   dict(params or {}))

    def at(self, x: float) -> tuple[float, float, float, float]:
        ev = lambda e: evaluate(e, x, self.params)
        return ev(self.alpha), ev(self.beta), ev(self.f), ev(self.g)


def _ionchannel_quadratic(ip: IonChannelParams, x: float, p: float) -> tuple[float, float]:
    """Coefficients (sigma, h) of lambda^2 + sigma*lambda - h = 0.

    sigma = N(alpha+beta) + p(2g - f); eliminating the trial-solution
    parameter shows the p factor on (2g - f) is required for the quadratic
    to reproduce the tilted-generator spectrum.
    """
    al, be, f, g = ip.at(x)
    n = ip.n_channels
    sig = n * (al + be) + p * (2.0 * g - f)
    h = p * (-n * be * g + (n * al + p * g) * (f - g))
    return sig, h


def ionchannel_lambda(ip: IonChannelParams, x: float, p: float) -> float:
    """Larger root of the quadratic satisfied by the Perron eigenvalue."""
    sig, h = _ionchannel_quadratic(ip, x, p)
    disc = sig * sig + 4.0 * h
    if disc < 0.0:
        raise ValueError(f"negative discriminant {disc} at (x={x}, p={p})")
    return 0.5 * (-sig + math.sqrt(disc))


def ionchannel_phi_prime(ip: IonChannelParams, x: float) -> float:
    """Nontrivial zero-energy branch of the reduced Hamilton-Jacobi
    equation h(x, Phi') = 0:

        Phi'(x) = -N [alpha f - (alpha + beta) g] / (g (f - g)).

    The numerator is (alpha+beta) times the averaged field, so this
    vanishes exactly at fixed points of the deterministic flow.
    """
    al, be, f, g = ip.at(x)
    den = g * (f - g)
    if den == 0.0:
        raise ZeroDivisionError(f"singular branch denominator at x={x}")
    return -ip.n_channels * (al * f - (al + be) * g) / den


def ionchannel_trial_z(ip: IonChannelParams, x: float, p: float) -> np.ndarray:
    """Left eigenvector z_n proportional to Gamma^n / ((N-n)! n!) with
    Gamma = (lambda + N alpha + p g) / (N beta); returned scaled so its
    largest component is one (the scale is arbitrary)."""
    al, be, f, g = ip.at(x)
    n = ip.n_channels
    lam = ionchannel_lambda(ip, x, p)
    gamma = (lam + n * al + p * g) / (n * be)
    if gamma <= 0.0:
        raise ValueError(f"trial solution needs Gamma > 0, got {gamma}")
    lg = math.log(gamma)
    logz = np.array(
        [k * lg - math.lgamma(n - k + 1) - math.lgamma(k + 1) for k in range(n + 1)]
    )
    return np.exp(logz - logz.max())


def ionchannel_model(ip: IonChannelParams, domain: tuple[float, float], epsilon: float) -> HybridModel:
    """HybridModel for the same channel population (K = N + 1 states)."""
    n = ip.n_channels
    drift = tuple(
        Bin("-", Bin("*", Num(k / n), ip.f), ip.g) for k in range(n + 1)
    )
    rates: dict[tuple[int, int], ExprAst] = {}
    for k in range(n + 1):
        if k < n:
            rates[(k, k + 1)] = Bin("*", ip.alpha, Num(float(n - k)))
        if k > 0:
            rates[(k, k - 1)] = Bin("*", ip.beta, Num(float(k)))
    return HybridModel(
        k=n + 1,
        domain=domain,
        epsilon=epsilon,
        drift=drift,
        rates=rates,
        params=dict(ip.params),
    )


def sodium_channel_params(current: float = 0.0, n_channels: int = 10) -> IonChannelParams:
    """Fast sodium channel population with the bundled config's constants.

    The opening rate is beta * exp(2 (x - v1)/v2), which makes the open
    fraction alpha/(alpha+beta) equal the Morris-Lecar activation curve
    (1 + tanh((x - v1)/v2))/2; the plain exp((x - v1)/v2) variant leaves
    the averaged field monostable at I = 0.
    """
    params = {
        "V_Na": 120.0,
        "V_L": -62.3,
        "g_Na": 4.4,
        "g_L": 2.2,
        "beta": 0.8,
        "v1": -1.2,
        "v2": 18.0,
        "I": current,
    }
    return IonChannelParams.from_strings(
        n_channels,
        alpha="beta*exp(2*(x - v1)/v2)",
        beta="beta",
        f="g_Na*(V_Na - x)",
        g="-g_L*(V_L - x) - I",
        params=params,
    )


# -- K=2 worked example: column-stochastic W with diagonal weights ---------

def appendix_example_matrix() -> np.ndarray:
    return np.array([[0.5, 1.0 / 3.0], [0.5, 2.0 / 3.0]])


def appendix_lambda(q1: float, q2: float) -> float:
    """lambda = (q1+q2)/2 + 7/12 + sqrt((q1-q2)^2 - (q1-q2)/3 + 25/36)/2."""
    d = q1 - q2
    return 0.5 * (q1 + q2) + 7.0 / 12.0 + 0.5 * math.sqrt(d * d - d / 3.0 + 25.0 / 36.0)


def _appendix_f(q: float) -> float:
    """Monotone odd-ish shape with limits -1/2 and +1/2 at -/+ infinity."""
    return 0.25 * (2.0 * q - 1.0 / 3.0) / math.sqrt(q * q - q / 3.0 + 25.0 / 36.0)


def appendix_psi(q1: float, q2: float) -> tuple[float, float]:
    """psi_1,2 = 1/2 +- f(q1 - q2); these are d lambda/d q_i."""
    fq = _appendix_f(q1 - q2)
    return 0.5 + fq, 0.5 - fq
