import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtri

from stbp.normal import MAX_ABS_ERROR, norm_ppf


def test_known_quantiles():
    assert norm_ppf(0.5) == pytest.approx(0.0, abs=MAX_ABS_ERROR)
    assert norm_ppf(0.95) == pytest.approx(1.644854, abs=MAX_ABS_ERROR)
    assert norm_ppf(0.99) == pytest.approx(2.326348, abs=MAX_ABS_ERROR)


def test_error_bound_on_dense_grid():
    q = np.linspace(1e-9, 1 - 1e-9, 20001)
    err = np.abs(np.array([norm_ppf(x) for x in q]) - ndtri(q))
    assert err.max() < MAX_ABS_ERROR


@given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
def test_matches_scipy(q):
    assert abs(norm_ppf(q) - float(ndtri(q))) < MAX_ABS_ERROR


@given(st.floats(min_value=1e-9, max_value=0.5))
def test_antisymmetric(q):
    assert norm_ppf(q) == pytest.approx(-norm_ppf(1 - q), abs=1e-6)


def test_endpoints_and_domain():
    assert norm_ppf(0.0) == -math.inf
    assert norm_ppf(1.0) == math.inf
    for bad in (-0.1, 1.1, math.nan):
        with pytest.raises(ValueError):
            norm_ppf(bad)
