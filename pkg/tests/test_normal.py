import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from castpanel.normal import norm_ppf, rng_stream, standard_normal


def test_known_quantiles():
    assert norm_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert norm_ppf(0.5) == 0.0
    assert norm_ppf(0.0) == -np.inf and norm_ppf(1.0) == np.inf
    assert np.isnan(norm_ppf(1.5))


def test_against_scipy_grid():
    p = np.concatenate([np.linspace(1e-9, 1 - 1e-9, 20001), np.logspace(-250, -2, 400)])
    np.testing.assert_allclose(norm_ppf(p), norm.ppf(p), rtol=0, atol=1e-10)
    q = np.logspace(-15, -2, 200)
    np.testing.assert_allclose(norm_ppf(1 - q), norm.ppf(1 - q), rtol=0, atol=1e-10)


@given(st.floats(1e-300, 1 - 1e-16))
def test_ppf_inverts_cdf(p):
    assert norm.cdf(norm_ppf(p)) == pytest.approx(p, rel=1e-9)


def test_streams_reproducible_and_distinct():
    a = standard_normal(rng_stream(5, 0, 3), 1000)
    b = standard_normal(rng_stream(5, 0, 3), 1000)
    c = standard_normal(rng_stream(5, 0, 4), 1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(a.mean()) < 0.15 and abs(a.std() - 1) < 0.1
