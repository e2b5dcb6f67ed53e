import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochburgers.forcing import (
    ForcingBatch,
    ForcingPath,
    TimeGrid,
    brownian_sup,
    dump_forcing,
    increment_range,
    load_forcing,
    sample_batch,
    sample_forcing,
    zeta,
    zeta_x,
)
from stochburgers.spectrum import Spectrum, covariance

SPEC = Spectrum((1.0, 0.3))


def _fixed_path(d1, d2, T=1.0):
    d1 = np.atleast_2d(np.asarray(d1, dtype=float))
    d2 = np.atleast_2d(np.asarray(d2, dtype=float))
    return ForcingPath(TimeGrid(T, d1.shape[1]), d1, d2)


def test_time_grid_ends_exactly_at_horizon():
    g = TimeGrid(1.0, 3)
    assert g.time(3) == 1.0
    assert g.times[-1] == 1.0
    assert g.index_of(1.0 / 3.0) == 1
    with pytest.raises(ValueError):
        g.index_of(0.5)
    for bad in ((0.0, 3), (1.0, 0), (1.0, 2.5)):
        with pytest.raises(ValueError):
            TimeGrid(*bad)


def test_sampling_is_deterministic():
    g = TimeGrid(1.0, 50)
    p, q = sample_forcing(SPEC, g, 17), sample_forcing(SPEC, g, 17)
    assert np.array_equal(p.d1, q.d1) and np.array_equal(p.d2, q.d2)
    r = sample_forcing(SPEC, g, 18)
    assert not np.array_equal(p.d1, r.d1)


def test_streams_do_not_depend_on_mode_count():
    # stream (j, n) is keyed on its own id, so adding modes leaves earlier rows intact
    g = TimeGrid(1.0, 20)
    p1 = sample_forcing(1, g, 5)
    p3 = sample_forcing(3, g, 5)
    assert np.array_equal(p1.d1[0], p3.d1[0]) and np.array_equal(p1.d2[0], p3.d2[0])


def test_batch_rows_match_single_paths():
    g = TimeGrid(1.0, 10)
    batch = sample_batch(SPEC, g, [3, 4])
    assert np.array_equal(batch.path(1).d2, sample_forcing(SPEC, g, 4).d2)
    assert batch.size == 2


def test_increments_are_read_only():
    p = sample_forcing(SPEC, TimeGrid(1.0, 4), 0)
    with pytest.raises(ValueError):
        p.d1[0, 0] = 1.0


def test_brownian_terminal_mean_and_variance():
    g = TimeGrid(1.0, 8)
    b = np.array([sample_forcing(1, g, s).d1[0].sum() for s in range(10_000)])
    se_mean = b.std(ddof=1) / math.sqrt(b.size)
    assert abs(b.mean()) <= 4 * se_mean
    # Var of the sample variance of a normal is 2 sigma^4 / (n - 1)
    se_var = math.sqrt(2.0 / (b.size - 1)) * g.T
    assert abs(b.var(ddof=1) - g.T) <= 4 * se_var


def test_zeta_examples():
    path = _fixed_path([[0.3, -0.1]], [[0.2, 0.5]])
    spec = Spectrum((1.0,))
    x = np.linspace(0, 2 * np.pi, 9)
    assert np.all(zeta(path, spec, 0, x) == 0.0)
    assert np.all(zeta_x(path, spec, 0, x) == 0.0)
    b, c = 0.3 - 0.1, 0.2 + 0.5
    np.testing.assert_allclose(zeta(path, spec, 2, x), b * np.cos(x) + c * np.sin(x), atol=1e-15)
    np.testing.assert_allclose(zeta_x(path, spec, 2, x), -b * np.sin(x) + c * np.cos(x), atol=1e-15)


@pytest.mark.parametrize("M", [7, 16, 33])
def test_forcing_has_zero_grid_mean(M):
    spec = Spectrum((0.5, 0.2, 0.1))
    path = sample_forcing(spec, TimeGrid(1.0, 10), 1)
    x = 2 * np.pi * np.arange(M) / M
    assert abs(np.mean(zeta(path, spec, 10, x))) < 1e-15
    assert abs(np.mean(zeta_x(path, spec, 10, x))) < 1e-15


def test_zeta_covariance_matches_spectrum():
    g = TimeGrid(1.0, 4)
    ks, kt, x, y = 2, 4, 0.4, 1.5
    prods = np.empty(10_000)
    for s in range(prods.size):
        p = sample_forcing(SPEC, g, s)
        prods[s] = zeta(p, SPEC, ks, x) * zeta(p, SPEC, kt, y)
    se = prods.std(ddof=1) / math.sqrt(prods.size)
    assert abs(prods.mean() - covariance(SPEC, g.time(ks), g.time(kt), x, y)) <= 5 * se


def test_distinct_streams_uncorrelated():
    g = TimeGrid(1.0, 2)
    pairs = np.array([[sample_forcing(2, g, s).d1[0, 0], sample_forcing(2, g, s).d2[1, 0]] for s in range(10_000)])
    prod = pairs[:, 0] * pairs[:, 1]
    se = prod.std(ddof=1) / math.sqrt(prod.size)
    assert abs(prod.mean()) <= 5 * se


def test_brownian_sup_examples():
    path = _fixed_path([[0.1, 0.2, 0.3]], [[-0.1, 0.3, -0.5]])
    assert brownian_sup(path, 1, 1, 0) == 0.0
    assert brownian_sup(path, 1, 1, 3) == pytest.approx(0.6)
    assert brownian_sup(path, 2, 1, 3) == pytest.approx(0.3)


def test_brownian_sup_second_moment():
    # reference: E[sup_{s<=1} |B_s|^2] is about 1.83 (brute-force fine-grid Monte Carlo)
    g = TimeGrid(1.0, 2000)
    s2 = np.array([brownian_sup(sample_forcing(1, g, s), 1, 1, g.K) ** 2 for s in range(10_000)])
    ref = np.array(
        [np.max(np.abs(np.cumsum(np.random.default_rng([9, s]).standard_normal(4000)))) ** 2 / 4000 for s in range(4000)]
    )
    assert 0.9 * ref.mean() <= s2.mean() <= 1.1 * ref.mean()
    assert s2.mean() >= 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**40), st.integers(1, 30))
def test_discrete_sup_nondecreasing(seed, K):
    path = sample_forcing(1, TimeGrid(1.0, K), seed)
    sups = [brownian_sup(path, 2, 1, k) for k in range(K + 1)]
    assert all(b >= a for a, b in zip(sups, sups[1:]))


def test_increment_range_single_mode_monotone():
    path = _fixed_path([[0.1, 0.2, 0.3, 0.4]], [[-0.1, -0.1, -0.1, -0.1]])
    assert increment_range(path, 1, 1, 3)[0] == pytest.approx(0.5)
    assert increment_range(path, 2, 0, 4)[0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        increment_range(path, 1, 3, 1)


def test_coarsen_sums_increments():
    path = sample_forcing(SPEC, TimeGrid(1.0, 12), 3)
    c = path.coarsen(3)
    assert c.grid.K == 4
    np.testing.assert_allclose(c.beta(1)[:, -1], path.beta(1)[:, -1], rtol=1e-13)
    with pytest.raises(ValueError):
        path.coarsen(5)


def test_dump_round_trip(tmp_path):
    path = sample_forcing(SPEC, TimeGrid(0.7, 9), 2**62 + 11)
    f = tmp_path / "path.bin"
    dump_forcing(path, f)
    back = load_forcing(f)
    assert back.seed == path.seed and back.grid == path.grid
    assert np.array_equal(back.d1, path.d1) and np.array_equal(back.d2, path.d2)
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_forcing(f)


def test_batch_stack_rejects_mixed_grids():
    with pytest.raises(ValueError):
        ForcingBatch.stack([sample_forcing(SPEC, TimeGrid(1.0, 4), 0), sample_forcing(SPEC, TimeGrid(1.0, 5), 0)])
