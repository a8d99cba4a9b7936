import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l1qr.core import (DataError, GroundTruth, QuantileGrid, build_dataset, check_loss,
                       parse_quantiles, penalized_objective)

quantiles = st.floats(0.01, 0.99)
reals = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("u, t, expected", [(0.5, 2.0, 1.0), (0.25, -4.0, 3.0), (0.9, 0.0, 0.0)])
def test_check_loss_examples(u, t, expected):
    assert check_loss(u, t) == pytest.approx(expected)


@given(quantiles, reals)
def test_check_loss_reflection(u, t):
    assert check_loss(u, t) == pytest.approx(check_loss(1 - u, -t), abs=1e-9)


@given(quantiles, reals, reals)
def test_check_loss_slopes(u, a, b):
    # piecewise linear with slope u above zero and u - 1 below
    if a > 0 and b > 0:
        assert check_loss(u, a) - check_loss(u, b) == pytest.approx(u * (a - b), abs=1e-7)
    if a < 0 and b < 0:
        assert check_loss(u, a) - check_loss(u, b) == pytest.approx((u - 1) * (a - b), abs=1e-7)


def test_column_scales():
    assert build_dataset(np.ones((4, 1)), [1, 2, 3, 4]).col_scales.tolist() == [1.0]
    d = build_dataset(np.array([[1, 2], [-1, 2], [1, 2], [-1, 2]]), [0, 0, 0, 0])
    assert d.col_scales.tolist() == [1.0, 2.0]


def test_dataset_is_read_only():
    d = build_dataset(np.ones((2, 1)), [1, 2])
    with pytest.raises(ValueError):
        d.X[0, 0] = 5.0


@pytest.mark.parametrize("raw, y", [
    (np.ones((3, 1)), [1, 2]),
    (np.array([[1.0], [np.nan]]), [1, 2]),
    (np.ones((2, 1)), [1, np.inf]),
    (np.zeros((2, 1)), [1, 2]),
])
def test_build_dataset_rejects(raw, y):
    with pytest.raises(DataError):
        build_dataset(raw, y)


def test_penalized_objective_examples():
    d = build_dataset(np.ones((2, 1)), [1.0, 3.0])
    assert penalized_objective(d, 0.5, 0.0, [2.0]) == pytest.approx(0.5)
    assert penalized_objective(d, 0.5, 4.0, [2.0]) == pytest.approx(2.5)
    d0 = build_dataset(np.ones((1, 1)), [0.0])
    assert penalized_objective(d0, 0.3, 7.0, [0.0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), quantiles, st.floats(0, 20), st.floats(0, 1))
def test_penalized_objective_convex(seed, u, lam, theta):
    rng = np.random.default_rng(seed)
    d = build_dataset(rng.standard_normal((15, 4)), rng.standard_normal(15))
    b1, b2 = rng.standard_normal(4), rng.standard_normal(4)
    mid = penalized_objective(d, u, lam, theta * b1 + (1 - theta) * b2)
    chord = theta * penalized_objective(d, u, lam, b1) + (1 - theta) * penalized_objective(d, u, lam, b2)
    assert mid <= chord + 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), quantiles, st.floats(0, 20), st.floats(0.01, 100), st.integers(0, 3))
def test_penalized_objective_column_scale(seed, u, lam, kappa, j):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, 4))
    y = rng.standard_normal(12)
    b = rng.standard_normal(4)
    base = penalized_objective(build_dataset(X, y), u, lam, b)
    X2, b2 = X.copy(), b.copy()
    X2[:, j] *= kappa
    b2[j] /= kappa
    assert penalized_objective(build_dataset(X2, y), u, lam, b2) == pytest.approx(base, rel=1e-10)


def test_parse_quantiles():
    g = parse_quantiles("0.1:0.9:0.1")
    assert len(g) == 9 and g.lo == pytest.approx(0.1) and g.hi == pytest.approx(0.9)
    assert parse_quantiles("0.25,0.5").points == (0.25, 0.5)
    assert QuantileGrid.single(0.5).points == (0.5,)
    for bad in ("0,0.5", "1.2", "0.9:0.1:0.1", "abc"):
        with pytest.raises(ValueError):
            parse_quantiles(bad)


def test_ground_truth_support():
    assert GroundTruth(np.array([0.0, 1.0, 0.0, -2.0])).support == (1, 3)
