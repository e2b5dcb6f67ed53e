"""Limiting moments, Monte Carlo moment estimates and the explicit bounds.

As viscosity vanishes the even moments approach
``E[u^{2p}(t, x)] -> (-Gamma''(0))^p (2p-1)!! t^p`` and every odd moment is
zero. :func:`moment_recursion` recovers the same numbers independently from
``M_p(t) = p(p-1)/2 * (-Gamma''(0)) * int_0^t M_{p-2}``, integrated exactly on
monomials.

All reductions over realizations use :func:`math.fsum`, so an estimate does not
depend on the order in which realizations arrive.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .spectrum import Spectrum, neg_gamma_pp0

__all__ = [
    "MAX_ORDER",
    "Z95",
    "MomentReport",
    "BoundAudit",
    "BOUND_NAMES",
    "double_factorial",
    "limit_moment",
    "moment_polynomials",
    "moment_recursion",
    "per_realization_moments",
    "batch_means",
    "mc_moment",
    "mc_multipoint",
    "g_constant",
    "lemma3_bound",
    "lemma4_bound",
    "theorem11_bound",
    "theorem23_moment_bound",
    "audit",
]

MAX_ORDER = 16
Z95 = 1.959963984540054
BOUND_NAMES = ("lemma3", "lemma4", "theorem11", "lemma6", "theorem23")


@dataclass
class MomentReport:
    """Diagonal moment estimate ``E[u^order(t, .)]`` with its 95% half-width."""

    order: int
    t: float
    estimate: float
    ci_halfwidth: float
    target: float
    n_samples: int
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if self.ci_halfwidth < 0:
            raise ValueError("ci_halfwidth must be nonnegative")
        if self.n_samples < 2:
            raise ValueError("a moment report needs at least two samples")

    def distance_to(self, lo: float, hi: float) -> float:
        """Distance from the estimate to the interval ``[lo, hi]`` (zero inside)."""
        return max(lo - self.estimate, self.estimate - hi, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoundAudit:
    bound_name: str
    bound_value: float
    empirical_value: float
    satisfied: bool = field(init=False)
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.bound_name not in BOUND_NAMES:
            raise ValueError(f"unknown bound {self.bound_name!r}; expected one of {BOUND_NAMES}")
        self.satisfied = bool(self.empirical_value <= self.bound_value)

    def to_dict(self) -> dict:
        return asdict(self)


def audit(name: str, bound_value: float, empirical_value: float, **params) -> BoundAudit:
    return BoundAudit(name, float(bound_value), float(empirical_value), params=params)


def _check_order(order: int) -> None:
    if int(order) != order or order < 0:
        raise ValueError(f"moment order must be a nonnegative integer, got {order}")
    if order > MAX_ORDER:
        raise ValueError(f"moment orders are capped at {MAX_ORDER}, got {order}")


def double_factorial(m: int) -> int:
    """``m!!`` for ``m >= -1`` (with ``(-1)!! = 0!! = 1``)."""
    if m < -1:
        raise ValueError(f"double factorial undefined for {m}")
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def limit_moment(order: int, t: float, spec: Spectrum) -> float:
    """Zero-viscosity moment ``lim E[u^order(t, x)]``."""
    _check_order(order)
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if order % 2:
        return 0.0
    p = order // 2
    return neg_gamma_pp0(spec) ** p * double_factorial(2 * p - 1) * t**p


def moment_polynomials(max_order: int, spec: Spectrum) -> list[np.ndarray]:
    """Coefficients of ``M_p(t)`` in increasing powers of ``t`` for ``p = 0 .. max_order``."""
    _check_order(max_order)
    g = neg_gamma_pp0(spec)
    polys: list[np.ndarray] = [np.array([1.0]), np.array([0.0])]
    for p in range(2, max_order + 1):
        prev = polys[p - 2]
        # int_0^t sum c_k s^k ds = sum c_k t^{k+1} / (k+1)
        integ = np.concatenate(([0.0], prev / np.arange(1, len(prev) + 1)))
        polys.append(0.5 * p * (p - 1) * g * integ)
    return polys[: max_order + 1]


def moment_recursion(max_order: int, t: float, spec: Spectrum) -> list[float]:
    """Values ``M_0(t) .. M_max_order(t)`` of the exact polynomial recursion."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    out = []
    for c in moment_polynomials(max_order, spec):
        out.append(math.fsum(c[k] * t**k for k in range(len(c))))
    return out


def per_realization_moments(fields: np.ndarray, order: int) -> np.ndarray:
    """Spatial average of ``u^order`` for each row of ``fields`` (shape ``(R, M)``)."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    if order == 0:
        return np.ones(fields.shape[0])
    return np.array([math.fsum(row) / row.size for row in fields**order])


def batch_means(values: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Mean and normal-theory 95% half-width over independent batch values."""
    y = np.asarray(values, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise ValueError(f"need at least 2 independent samples, got {n}")
    mean = math.fsum(y) / n
    var = math.fsum((y - mean) ** 2) / (n - 1)
    return mean, Z95 * math.sqrt(var / n)


def mc_moment(
    fields: np.ndarray | Iterable[np.ndarray],
    order: int,
    *,
    t: float = float("nan"),
    spec: Spectrum | None = None,
    epsilon: float | None = None,
) -> MomentReport:
    """Ensemble estimate of ``E[u^order(t, x)]`` with a batch-means interval.

    Each realization is first averaged over the grid (grid points of one field
    are correlated, so a field is one batch); the interval comes from the
    spread of those per-realization averages.
    """
    _check_order(order)
    arr = np.asarray(list(fields) if not isinstance(fields, np.ndarray) else fields, dtype=float)
    arr = np.atleast_2d(arr)
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 realizations, got {arr.shape[0]}")
    target = limit_moment(order, t, spec) if spec is not None and math.isfinite(t) else float("nan")
    if order == 0:
        return MomentReport(0, t, 1.0, 0.0, 1.0, arr.shape[0], epsilon)
    est, hw = batch_means(per_realization_moments(arr, order))
    return MomentReport(order, t, est, hw, target, arr.shape[0], epsilon)


def _sample_periodic(fields: np.ndarray, x: float) -> np.ndarray:
    M = fields.shape[-1]
    pos = (x % (2.0 * math.pi)) / (2.0 * math.pi) * M
    j = int(math.floor(pos))
    w = pos - j
    if w < 1e-12:
        return fields[:, j % M]
    return (1.0 - w) * fields[:, j % M] + w * fields[:, (j + 1) % M]


def mc_multipoint(fields: np.ndarray, points: Sequence[float]) -> tuple[float, float]:
    """Estimate ``E[u(t, x_1) ... u(t, x_p)]`` with its 95% half-width.

    Points off the grid are read by periodic linear interpolation.
    """
    arr = np.atleast_2d(np.asarray(fields, dtype=float))
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 realizations, got {arr.shape[0]}")
    prod = np.ones(arr.shape[0])
    for x in points:
        prod = prod * _sample_periodic(arr, float(x))
    return batch_means(prod)


def g_constant(p: float) -> float:
    """``G(p) = int_0^inf y^p exp(-y^2/2) dy = 2^((p-1)/2) Gamma((p+1)/2)``."""
    if p < 0:
        raise ValueError(f"G(p) needs p >= 0, got {p}")
    return math.exp(0.5 * (p - 1) * math.log(2.0) + math.lgamma(0.5 * (p + 1)))


_LEMMA3_C = math.sqrt(math.log(2.0)) + 2.0 * math.sqrt(math.pi)


def lemma3_bound(weights: Iterable[float], t: float) -> float:
    """Ceiling on ``E[exp(sum_j a_j S^j(t))]`` for suprema of independent Brownian motions."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    w = [float(a) for a in weights]
    sq = math.fsum(a * a for a in w)
    ab = math.fsum(abs(a) for a in w)
    return math.exp(0.5 * t * sq + math.sqrt(2.0 * t) * _LEMMA3_C * ab)


def lemma4_bound(p: float, t: float, sum_abs: float) -> float:
    """Ceiling on ``E[|sum_j a_j S^j(t)|^p]`` given ``sum_abs = sum_j |a_j|``."""
    if p < 1:
        raise ValueError(f"lemma 4 needs p >= 1, got {p}")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    return sum_abs**p * t ** (0.5 * p) * ((2.0 * math.log(2.0)) ** (0.5 * p) + 2.0 * p * g_constant(p - 1))


def theorem11_bound(p: float, t: float, spec: Spectrum) -> float:
    """Ceiling on ``E[(sup_{s<=t, x} |u(s, x)|)^p]``, uniform in viscosity."""
    if p < 1:
        raise ValueError(f"theorem 11 bound needs p >= 1, got {p}")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    c1 = (2.0 + t) ** (1.5 * p) * math.sqrt((2.0 * math.log(2.0)) ** p + 4.0 * p * g_constant(2 * p - 1))
    c2 = 2.0 * p * p * t**3
    c3 = 2.0 * math.sqrt(2.0) * (2.0 * math.sqrt(math.pi) + math.sqrt(math.log(2.0))) * p * t**1.5
    s3 = spec.moment_sum(3, absolute=True)
    s6 = spec.moment_sum(6, squared=True)
    return c1 * s3**p * math.exp(c2 * s6 + c3 * s3)


def theorem23_moment_bound(p: float, spec: Spectrum) -> float:
    """``10^p exp{32 p^2 sum n^4 a_n^2 + 8p (sqrt(2 log 2) + 2 sqrt(2 pi)) sum n^2 |a_n|}``."""
    if p < 1:
        raise ValueError(f"theorem 23 bound needs p >= 1, got {p}")
    s4 = spec.moment_sum(4, squared=True)
    s2 = spec.moment_sum(2, absolute=True)
    c = math.sqrt(2.0 * math.log(2.0)) + 2.0 * math.sqrt(2.0 * math.pi)
    return 10.0**p * math.exp(32.0 * p * p * s4 + 8.0 * p * c * s2)
