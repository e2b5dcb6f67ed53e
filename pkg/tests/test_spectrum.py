import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochburgers.spectrum import Spectrum, SpectrumError, covariance, gamma, neg_gamma_pp0

coeff_lists = st.lists(
    st.floats(min_value=-2.0, max_value=2.0, allow_nan=False), min_size=1, max_size=6
).filter(lambda c: any(abs(a) > 1e-3 for a in c))
angles = st.floats(min_value=-20.0, max_value=20.0, allow_nan=False)


@pytest.mark.parametrize(
    "coeffs, x, expected",
    [
        ((1.0,), 0.0, 1.0),
        ((1.0,), math.pi, -1.0),
        # mpmath: cos(0.3) + 0.25 cos(0.6)
        ((1.0, 0.5), 0.3, 1.16167039285302559395),
    ],
)
def test_gamma_examples(coeffs, x, expected):
    assert gamma(Spectrum(coeffs), x) == pytest.approx(expected, rel=1e-14, abs=1e-15)


@pytest.mark.parametrize(
    "coeffs, expected",
    [((1.0,), 1.0), ((0.0, 1.0), 4.0), ((0.5, 0.25, 0.1), 0.59)],
)
def test_neg_gamma_pp0_examples(coeffs, expected):
    assert neg_gamma_pp0(Spectrum(coeffs)) == pytest.approx(expected, rel=1e-14)


def test_covariance_examples():
    spec = Spectrum((1.0, 0.3))
    assert covariance(spec, 0.0, 1.7, 0.4, 2.0) == 0.0
    assert covariance(Spectrum((1.0,)), 1.0, 1.0, 0.9, 0.9) == pytest.approx(1.0)
    # mpmath: 2 (cos 0.7 + 0.09 cos 1.4)
    assert covariance(spec, 2.0, 3.0, 1.0, 0.3) == pytest.approx(1.56027846029102022146, rel=1e-14)
    assert covariance(spec, 3.0, 2.0, 0.3, 1.0) == covariance(spec, 2.0, 3.0, 1.0, 0.3)


def test_covariance_rejects_negative_time():
    with pytest.raises(ValueError):
        covariance(Spectrum((1.0,)), -0.1, 1.0, 0.0, 0.0)


@pytest.mark.parametrize("coeffs", [(), (0.0, 0.0), (1.0, math.nan), (math.inf,)])
def test_invalid_spectra_rejected(coeffs):
    with pytest.raises(SpectrumError):
        Spectrum(coeffs)


def test_power_law_family_expands():
    spec = Spectrum.power_law(2.0, 3.0, 4)
    assert spec.coeffs == (2.0, 0.25, 2.0 / 27.0, 2.0 / 64.0)
    assert Spectrum.from_config({"c": 2.0, "q": 3.0, "n_max": 4}) == spec
    assert Spectrum.from_config({"a": [0.5]}) == Spectrum((0.5,))
    with pytest.raises(SpectrumError):
        Spectrum.from_config({"c": 1.0})


def test_diagnostics_report_summability_sums():
    spec = Spectrum((1.0, -0.5))
    d = spec.diagnostics()
    assert d["sum_n4_abs_a"] == pytest.approx(1.0 + 16 * 0.5)
    assert d["sum_n8_a2"] == pytest.approx(1.0 + 256 * 0.25)


@settings(max_examples=60, deadline=None)
@given(coeff_lists, angles)
def test_gamma_even_and_periodic(coeffs, x):
    spec = Spectrum(tuple(coeffs))
    g = gamma(spec, x)
    assert gamma(spec, -x) == pytest.approx(g, abs=1e-12)
    assert gamma(spec, x + 2 * math.pi) == pytest.approx(g, abs=1e-11)


@settings(max_examples=60, deadline=None)
@given(coeff_lists, angles)
def test_gamma_maximal_at_origin(coeffs, x):
    spec = Spectrum(tuple(coeffs))
    g0 = gamma(spec, 0.0)
    assert g0 == pytest.approx(sum(a * a for a in coeffs))
    assert abs(gamma(spec, x)) <= g0 + 1e-12


@settings(max_examples=30, deadline=None)
@given(coeff_lists)
def test_neg_gamma_pp0_matches_central_difference(coeffs):
    spec = Spectrum(tuple(coeffs))
    g = neg_gamma_pp0(spec)
    errs = []
    for h in (1e-2, 5e-3):
        fd = -(gamma(spec, h) - 2 * gamma(spec, 0.0) + gamma(spec, -h)) / h**2
        errs.append(abs(fd - g))
    # O(h^2) truncation: error shrinks by about 4 when h halves
    n = len(coeffs)
    assert errs[0] <= 1e-4 * n**4 * max(abs(a) for a in coeffs) ** 2 + 1e-7
    assert errs[1] <= errs[0] / 3 + 1e-7


def test_gamma_accepts_arrays():
    x = np.linspace(0, 2 * np.pi, 7)
    spec = Spectrum((1.0, 0.5))
    np.testing.assert_allclose(gamma(spec, x), np.cos(x) + 0.25 * np.cos(2 * x), atol=1e-15)
