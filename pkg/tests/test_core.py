import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groundplan.core import (
    ActionBounds,
    DegenerateLatentError,
    RngStream,
    WeightConfig,
    as_vector,
    l2_normalize,
    mse,
    rng_fork,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(l2_normalize([0.0, 0.0, 7.0]), [0.0, 0.0, 1.0])
    with pytest.raises(DegenerateLatentError, match="degenerate latent"):
        l2_normalize([0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(1e-3, 1e3))
def test_l2_normalize_unit_and_scale_free(z, c):
    if np.linalg.norm(z) < 1e-3:
        return
    u = l2_normalize(z)
    assert abs(np.linalg.norm(u) - 1.0) <= 1e-12
    np.testing.assert_allclose(l2_normalize(c * z), u, atol=1e-12)


def test_mse_examples():
    assert mse([1, 2], [1, 2]) == 0.0
    assert mse([1, 2], [1, 0]) == 2.0
    assert mse([0], [3]) == 9.0
    with pytest.raises(ValueError):
        mse([1, 2], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                                                     arrays(np.float64, n, elements=finite))))
def test_mse_symmetric_nonnegative(pair):
    a, b = pair
    assert mse(a, b) == mse(b, a)
    assert mse(a, b) >= 0.0
    assert mse(a, a) == 0.0


def test_fork_determinism_and_distinctness():
    s = RngStream(42, 0)
    a = rng_fork(s, 1).generator().standard_normal(100)
    b = rng_fork(s, 1).generator().standard_normal(100)
    c = rng_fork(s, 2).generator().standard_normal(100)
    d = rng_fork(rng_fork(s, 1), 1).generator().standard_normal(100)
    np.testing.assert_array_equal(a, b)
    assert np.all(a != c)
    assert not np.array_equal(a, d)


def test_same_seed_and_stream_reproduce():
    x = RngStream(7, 3).generator().integers(0, 2**32, size=20)
    y = RngStream(7, 3).generator().integers(0, 2**32, size=20)
    z = RngStream(7, 4).generator().integers(0, 2**32, size=20)
    np.testing.assert_array_equal(x, y)
    assert not np.array_equal(x, z)


def test_action_bounds_and_weights_validate():
    b = ActionBounds.symmetric([0.1, 0.2])
    np.testing.assert_array_equal(b.clip([1.0, -1.0]), [0.1, -0.2])
    with pytest.raises(ValueError):
        ActionBounds(np.array([0.1]), np.array([0.1]))
    with pytest.raises(ValueError):
        WeightConfig(-1.0, 1.0, 1.0)
    assert WeightConfig() == WeightConfig(1.0, 10.0, 0.05)


def test_as_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        as_vector([1.0, np.nan])
    with pytest.raises(ValueError):
        as_vector([1.0, 2.0], dim=3)
