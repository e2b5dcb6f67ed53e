"""Noise spectrum of the forcing field and its covariance function.

The forcing is ``zeta(t, x) = sum_n a_n (cos(n x) beta1_n(t) + sin(n x) beta2_n(t))``
with a finite list of coefficients ``a_1 .. a_N``. Its spatial covariance is
``Gamma(x) = sum_n a_n^2 cos(n x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

__all__ = ["Spectrum", "SpectrumError", "gamma", "neg_gamma_pp0", "covariance"]


class SpectrumError(ValueError):
    """Raised for a degenerate or malformed spectrum."""


@dataclass(frozen=True)
class Spectrum:
    """Finite forcing spectrum ``a_1 .. a_N``.

    ``coeffs[i]`` is the coefficient of mode ``n = i + 1``.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) < 1:
            raise SpectrumError("spectrum needs at least one coefficient")
        if not all(math.isfinite(c) for c in coeffs):
            raise SpectrumError(f"non-finite spectrum coefficient in {coeffs}")
        if all(c == 0.0 for c in coeffs):
            raise SpectrumError("all-zero spectrum: the forcing is degenerate")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_list(cls, coeffs: Iterable[float]) -> "Spectrum":
        return cls(tuple(coeffs))

    @classmethod
    def power_law(cls, c: float, q: float, n_max: int) -> "Spectrum":
        """Expand the family ``a_n = c * n**(-q)`` for ``n = 1 .. n_max``."""
        if n_max < 1:
            raise SpectrumError(f"n_max must be >= 1, got {n_max}")
        return cls(tuple(c * float(n) ** (-q) for n in range(1, n_max + 1)))

    @classmethod
    def from_config(cls, table: Mapping) -> "Spectrum":
        """Build from a config table holding either ``a = [...]`` or ``c, q, n_max``."""
        if "a" in table:
            return cls.from_list(table["a"])
        try:
            return cls.power_law(float(table["c"]), float(table["q"]), int(table["n_max"]))
        except KeyError as exc:
            raise SpectrumError(
                "spectrum needs either 'a = [..]' or the family keys 'c', 'q', 'n_max'"
            ) from exc

    @property
    def n_max(self) -> int:
        return len(self.coeffs)

    @property
    def modes(self) -> np.ndarray:
        """Wavenumbers ``1 .. N`` as floats."""
        return np.arange(1, self.n_max + 1, dtype=float)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def moment_sum(self, power: int, absolute: bool = False, squared: bool = False) -> float:
        """Return ``sum_n n**power * w_n`` where ``w_n`` is ``|a_n|`` or ``a_n**2``.

        The default (neither flag) uses the signed ``a_n``.
        """
        w = self.a
        if squared:
            w = w * w
        elif absolute:
            w = np.abs(w)
        return math.fsum(self.modes**power * w)

    def diagnostics(self) -> dict[str, float]:
        """Summability sums of the decay hypothesis, reported and never enforced."""
        return {
            "sum_n4_abs_a": self.moment_sum(4, absolute=True),
            "sum_n8_a2": self.moment_sum(8, squared=True),
        }

    def to_dict(self) -> dict:
        return {"a": list(self.coeffs)}


def gamma(spec: Spectrum, x) -> np.ndarray | float:
    """Spatial covariance ``Gamma(x) = sum_n a_n^2 cos(n x)``; accepts scalars or arrays."""
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    for n, a_n in enumerate(spec.coeffs, start=1):
        out = out + a_n * a_n * np.cos(n * x_arr)
    if out.ndim == 0:
        return float(out)
    return out


def neg_gamma_pp0(spec: Spectrum) -> float:
    """``-Gamma''(0) = sum_n n^2 a_n^2``, the variance rate of the forcing gradient."""
    value = spec.moment_sum(2, squared=True)
    if not value > 0.0:
        raise SpectrumError("degenerate spectrum: -Gamma''(0) must be positive")
    return value


def covariance(spec: Spectrum, s: float, t: float, x: float, y: float) -> float:
    """``E[zeta(t, x) zeta(s, y)] = min(s, t) * Gamma(x - y)``."""
    if s < 0 or t < 0:
        raise ValueError(f"times must be nonnegative, got s={s}, t={t}")
    return min(s, t) * gamma(spec, x - y)
