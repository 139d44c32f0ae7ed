"""Closed-form quantities for biased random walk on random spanning trees of the ladder.

Everything here is a pure function of the tree parameter ``alpha`` (or the rung
weight ``c``) and the bias ``beta``.  Divergent quantities are returned as the
:data:`DIVERGENT` marker instead of a float infinity so they cannot leak into
arithmetic unnoticed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

__all__ = [
    "DIVERGENT",
    "Divergent",
    "DomainError",
    "ModelParams",
    "CriticalValues",
    "SpeedBreakdown",
    "alpha_from_c",
    "c_from_alpha",
    "critical_values",
    "s_bounds",
    "weight_sum_C",
    "trap_mean_time",
    "mean_trap_time_avg",
    "rung_probability",
    "speed_uniform",
    "speed",
    "speed_value",
    "inverse_speed_formula",
    "expected_tau1",
    "tau1_conditional",
    "f1",
    "f2",
    "f3",
    "block_probability",
    "einstein_sigma2",
    "ray_statistics",
    "small_alpha_limits",
    "central_difference",
]


class DomainError(ValueError):
    """A parameter lies outside the domain where the quantity is defined."""


class Divergent:
    """Tagged +infinity.  Supports comparison and ``float()`` but no arithmetic."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "DIVERGENT"

    def __float__(self):
        return math.inf

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("DIVERGENT")

    def __gt__(self, other):
        return other is not self

    def __lt__(self, other):
        return False


DIVERGENT = Divergent()

Number = Union[float, Divergent]


def _check_alpha(alpha):
    if not (math.isfinite(alpha) and 0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def _check_beta(beta, strict=False):
    if not math.isfinite(beta) or beta < 1.0 or (strict and beta == 1.0):
        op = ">" if strict else ">="
        raise DomainError(f"beta must be finite and {op} 1, got {beta!r}")


def alpha_from_c(c: float) -> float:
    """Geometric parameter of the block gaps for rung weight ``c``.

    Evaluated as ``1 / (c + 1 + sqrt(c^2 + 2c))``, which is algebraically equal
    to ``c + 1 - sqrt(c^2 + 2c)`` (the two are reciprocal roots of
    ``x^2 - 2(c+1)x + 1``) but does not cancel catastrophically for large ``c``.
    """
    if not (isinstance(c, (int, float)) and math.isfinite(c) and c > 0):
        raise DomainError(f"c must be a positive finite number, got {c!r}")
    return 1.0 / (c + 1.0 + math.sqrt(c * c + 2.0 * c))


def c_from_alpha(alpha: float) -> float:
    """Inverse of :func:`alpha_from_c`: ``c = (1 - alpha)^2 / (2 alpha)``."""
    _check_alpha(alpha)
    return (1.0 - alpha) ** 2 / (2.0 * alpha)


@dataclass(frozen=True)
class ModelParams:
    """Full experiment configuration.  Build with :meth:`from_c` or :meth:`from_alpha`."""

    alpha: float
    beta: float = 1.0
    seed: int = 0
    c: Optional[float] = None
    source: str = "alpha"

    def __post_init__(self):
        _check_alpha(self.alpha)
        _check_beta(self.beta)
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.c is None:
            object.__setattr__(self, "c", c_from_alpha(self.alpha))
        if self.c <= 0:
            raise DomainError("c must be positive")

    @classmethod
    def from_c(cls, c: float, beta: float = 1.0, seed: int = 0) -> "ModelParams":
        return cls(alpha=alpha_from_c(c), beta=beta, seed=seed, c=float(c), source="c")

    @classmethod
    def from_alpha(cls, alpha: float, beta: float = 1.0, seed: int = 0) -> "ModelParams":
        return cls(alpha=float(alpha), beta=beta, seed=seed, source="alpha")

    def with_beta(self, beta: float) -> "ModelParams":
        return ModelParams(self.alpha, beta, self.seed, self.c, self.source)


@dataclass(frozen=True)
class CriticalValues:
    beta_c1: float
    beta_c2: float
    rho: Optional[float] = None


def critical_values(alpha: float, beta: Optional[float] = None) -> CriticalValues:
    """Ballistic threshold ``1/alpha``, CLT threshold ``1/sqrt(alpha)`` and the
    trap-time tail exponent ``-log(alpha)/log(beta)``."""
    _check_alpha(alpha)
    rho = None
    if beta is not None:
        if not math.isfinite(beta) or beta <= 1.0:
            raise DomainError("the tail exponent needs beta > 1")
        rho = -math.log(alpha) / math.log(beta)
    return CriticalValues(1.0 / alpha, 1.0 / math.sqrt(alpha), rho)


def s_bounds(alpha: float, beta: float) -> tuple:
    """``(E[beta^F], E[beta^-F])`` for ``F`` geometric with ``P[F=k] = (1-alpha) alpha^k``.

    The first entry is :data:`DIVERGENT` when ``alpha * beta >= 1``.
    """
    _check_alpha(alpha)
    _check_beta(beta)
    s_minus = (1.0 - alpha) * beta / (beta - alpha)
    if alpha * beta >= 1.0:
        return DIVERGENT, s_minus
    return (1.0 - alpha) / (1.0 - alpha * beta), s_minus


def weight_sum_C(alpha: float, beta: float) -> float:
    """Expected total conductance left of a missing horizontal edge at column 0."""
    _check_alpha(alpha)
    _check_beta(beta, strict=True)
    head = 2.0 * beta / (beta - 1.0)
    direct = head - (beta - alpha) / (beta - alpha * alpha)
    _, s_minus = s_bounds(alpha, beta)
    via_s = head - (1.0 - s_minus / beta) / (1.0 - s_minus * s_minus / beta)
    if not math.isclose(direct, via_s, rel_tol=1e-12, abs_tol=0.0):
        raise ArithmeticError(f"C forms disagree: {direct!r} vs {via_s!r}")
    return direct


def trap_mean_time(kind: str, beta: float, k: int = 0, l: int = 0) -> float:
    """Expected time spent inside one trap before the next step along the ray.

    ``kind`` is ``"a"`` (dead end of ``k`` edges right of a turn), ``"b"`` (dead
    end of ``l`` edges left of a turn) or ``"c"`` (a rung with arms ``k`` right
    and ``l`` left).  The final ray step is not counted.
    """
    _check_beta(beta)
    if k < 0 or l < 0 or int(k) != k or int(l) != l:
        raise DomainError("arm lengths must be non-negative integers")
    k, l = int(k), int(l)
    if kind == "a":
        if beta == 1.0:
            return float(k)
        return beta * (beta**k - 1.0) / (beta - 1.0)
    if kind == "b":
        if beta == 1.0:
            return float(l)
        return 2.0 * beta / (beta + 1.0) * (1.0 - beta ** (-l)) / (beta - 1.0)
    if kind == "c":
        if beta == 1.0:
            return float(k + l + 1)
        return 2.0 / (1.0 + beta) * (1.0 + beta / (beta - 1.0) * (beta**k - beta ** (-l)))
    raise DomainError(f"unknown trap kind {kind!r}")


def mean_trap_time_avg(alpha: float, beta: float) -> float:
    """Type-(c) trap time averaged over independent geometric arms."""
    _check_alpha(alpha)
    _check_beta(beta)
    if alpha * beta >= 1.0:
        raise DomainError("the averaged trap time diverges for beta >= 1/alpha")
    if beta == 1.0:
        return (1.0 + alpha) / (1.0 - alpha)
    s_plus, s_minus = s_bounds(alpha, beta)
    return 2.0 / (beta + 1.0) * (1.0 + beta / (beta - 1.0) * (s_plus - s_minus))


def rung_probability(alpha: float) -> float:
    """Probability that a given rung belongs to the tree."""
    _check_alpha(alpha)
    return (1.0 - alpha) / (1.0 + alpha)


def speed_uniform(alpha: float, beta: float) -> float:
    """Speed on the comparison tree whose ray is one full row (type-(c) traps only)."""
    _check_alpha(alpha)
    _check_beta(beta)
    if beta == 1.0 or alpha * beta >= 1.0:
        return 0.0
    p = rung_probability(alpha)
    return (beta - 1.0) / (beta + 1.0) / (1.0 + p * mean_trap_time_avg(alpha, beta))


def inverse_speed_formula(alpha: float, beta: float) -> float:
    """Right-hand side of the explicit formula for ``1/v``.

    No regime guard: defined for any ``beta != 1`` with ``alpha * beta < 1``
    and ``beta > alpha``, which is what the derivative checks near ``beta = 1``
    need.
    """
    s_plus = (1.0 - alpha) / (1.0 - alpha * beta)
    s_minus = (1.0 - alpha) * beta / (beta - alpha)
    big_c = 2.0 * beta / (beta - 1.0) - (beta - alpha) / (beta - alpha * alpha)
    p = (1.0 - alpha) / (1.0 + alpha)
    bm1 = beta - 1.0
    return (beta + 1.0) / bm1 + p * (
        (beta + 3.0) / (2.0 * bm1)
        + beta * (beta + 1.0) / (bm1 * bm1) * (s_plus - s_minus)
        + big_c * s_minus
    )


def speed_value(alpha: float, beta: float) -> float:
    """Analytic continuation of ``v`` used for finite differences (no regime guard)."""
    return 1.0 / inverse_speed_formula(alpha, beta)


def expected_tau1(alpha: float, beta: float) -> float:
    """Mean time to advance one column along the ray, assembled from ``1/v^u``
    plus the correction for rungs that lie on the ray."""
    s_plus, s_minus = s_bounds(alpha, beta)
    if s_plus is DIVERGENT:
        raise DomainError("E[tau_1] diverges for beta >= 1/alpha")
    big_c = weight_sum_C(alpha, beta)
    p = rung_probability(alpha)
    correction = 0.5 * p * (
        1.0 + 2.0 * (big_c - beta / (beta - 1.0)) * s_minus + 2.0 * beta / (beta - 1.0) * s_plus
    )
    return 1.0 / speed_uniform(alpha, beta) + correction


@dataclass(frozen=True)
class SpeedBreakdown:
    s_plus: Number
    s_minus: float
    big_c: Number
    v_uniform: float
    e_tau1: Number
    v: float


def speed(alpha: float, beta: float) -> SpeedBreakdown:
    """Asymptotic speed together with the intermediate quantities.

    ``1/v`` is computed by two independent routes which must agree to 1e-10.
    """
    _check_alpha(alpha)
    _check_beta(beta)
    s_plus, s_minus = s_bounds(alpha, beta)
    if beta == 1.0:
        return SpeedBreakdown(s_plus, s_minus, DIVERGENT, 0.0, DIVERGENT, 0.0)
    big_c = weight_sum_C(alpha, beta)
    if s_plus is DIVERGENT:
        return SpeedBreakdown(s_plus, s_minus, big_c, 0.0, DIVERGENT, 0.0)
    inv_v = inverse_speed_formula(alpha, beta)
    e_tau1 = expected_tau1(alpha, beta)
    if not math.isclose(inv_v, e_tau1, rel_tol=1e-10, abs_tol=0.0):
        raise ArithmeticError(f"1/v routes disagree at alpha={alpha}, beta={beta}: {inv_v} vs {e_tau1}")
    return SpeedBreakdown(s_plus, s_minus, big_c, speed_uniform(alpha, beta), e_tau1, 1.0 / inv_v)


# Conditional passage times given the shape of the block around the origin.
# a = F'_0, b = F_0, k = -V_0, sigma = [W_1 != W_0].


def f1(alpha: float, beta: float, a: int, k: int) -> float:
    big_c = weight_sum_C(alpha, beta)
    return 2.0 * (big_c / beta - 1.0 / (beta - 1.0)) * beta ** (-a - k)


def f2(alpha: float, beta: float, a: int, b: int, k: int) -> float:
    _check_beta(beta, strict=True)
    return 2.0 * beta ** (-k) * (1.0 / beta + (beta**b - beta ** (-a)) / (beta - 1.0))


def f3(alpha: float, beta: float, a: int, b: int) -> float:
    big_c = weight_sum_C(alpha, beta)
    ratio = beta / (beta - 1.0)
    return 1.0 + 2.0 * (big_c - ratio) * beta ** (-a) + 2.0 * ratio * beta**b


def _check_block_event(a, b, k, sigma):
    if a < 0 or b < 0 or not (-a <= k <= b) or sigma not in (0, 1):
        raise DomainError(f"impossible origin event a={a}, b={b}, k={k}, sigma={sigma}")


def tau1_conditional(alpha: float, beta: float, a: int, b: int, k: int, sigma: int) -> float:
    """Annealed ``E_0[tau_1]`` given the origin block event ``(a, b, k, sigma)``."""
    _check_alpha(alpha)
    _check_beta(beta, strict=True)
    _check_block_event(a, b, k, sigma)
    base = (beta + 1.0) / (beta - 1.0) + f1(alpha, beta, a, k)
    if k < 0:
        return base
    base += f2(alpha, beta, a, b, k)
    if k == 0 and sigma == 1:
        base += f3(alpha, beta, a, b)
    return base


def block_probability(alpha: float, a: int, b: int, k: int, sigma: int) -> float:
    """Probability of the origin block event ``(a, b, k, sigma)``; independent of ``k`` and ``sigma``."""
    _check_alpha(alpha)
    _check_block_event(a, b, k, sigma)
    return 0.5 * rung_probability(alpha) * (1.0 - alpha) ** 2 * alpha ** (a + b)


def einstein_sigma2(alpha: float) -> float:
    """Diffusivity of the unbiased walk, ``(1+alpha)/(3+alpha)``."""
    _check_alpha(alpha)
    return (1.0 + alpha) / (3.0 + alpha)


def ray_statistics(alpha: float) -> tuple:
    """``(column/ray-index ratio, mean holding time per ray vertex)``."""
    _check_alpha(alpha)
    ratio = 2.0 * (1.0 + alpha) / (3.0 + alpha)
    return ratio, 2.0 * ratio


def small_alpha_limits(beta: float) -> tuple:
    """Limits of ``v`` and ``dv/dalpha`` as ``alpha -> 0``."""
    _check_beta(beta, strict=True)
    den = 5.0 * beta + 7.0
    return 2.0 * (beta - 1.0) / den, 4.0 * (beta - 1.0) * (beta + 1.0) * (3.0 - beta) / den**2


def central_difference(fn, x: float, h: float = 1e-5) -> float:
    return (fn(x + h) - fn(x - h)) / (2.0 * h)
