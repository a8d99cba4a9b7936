import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l1qr.core import build_dataset, penalized_objective, penalty_weights
from l1qr.lp import QuantileFit, SolverError, gap_tol, solve_qr_lp, verify_optimality

from conftest import gaussian_dataset
from oracles import dual_certificate, vertex_enumeration


def test_sample_median(median3):
    fit = solve_qr_lp(median3, 0.5, 0.0)
    assert fit.beta.tolist() == pytest.approx([2.0])
    assert fit.primal_objective == pytest.approx(1 / 3)
    rep = verify_optimality(fit, median3)
    assert abs(rep.duality_gap) <= 1e-9
    assert rep.max_dual_box_violation <= 1e-9
    assert rep.max_dual_constraint_violation <= 1e-9
    assert rep.complementary_slackness_ok


def test_large_penalty_gives_zero(median3):
    fit = solve_qr_lp(median3, 0.5, 6.0)
    assert fit.beta.tolist() == [0.0]
    assert fit.support == ()
    assert fit.primal_objective == pytest.approx(1.0)


def test_small_instance_matches_vertex_oracle():
    rng = np.random.default_rng(20240601)
    X, y = rng.standard_normal((6, 2)), rng.standard_normal(6)
    fit = solve_qr_lp(build_dataset(X, y), 0.5, 1.0)
    value, _ = vertex_enumeration(X, y, 0.5, 1.0)
    assert fit.primal_objective == pytest.approx(value, abs=1e-9)


def test_signs_agree_with_external_dual():
    rng = np.random.default_rng(7)
    X, y = rng.standard_normal((10, 3)), rng.standard_normal(10)
    u, lam = 0.5, 0.7
    d = build_dataset(X, y)
    fit = solve_qr_lp(d, u, lam)
    a, value = dual_certificate(X, y, u, lam)
    assert fit.primal_objective == pytest.approx(value, abs=1e-9)
    w = penalty_weights(d, u, lam, False)
    for j in fit.support:
        assert X[:, j] @ a == pytest.approx(np.sign(fit.beta[j]) * w[j], abs=1e-7)


def test_constructed_slackness_violation():
    d = build_dataset(np.ones((3, 1)), [1.0, 2.0, 3.0])
    u = 0.5
    beta = np.array([2.0])  # row 0 has a negative residual
    a = np.full(3, u)
    fit = QuantileFit(u=u, lam=0.0, beta=beta, dual_scores=a, support=(0,),
                      primal_objective=penalized_objective(d, u, 0.0, beta),
                      dual_objective=float(np.mean(d.y * a)), n_interpolated=1,
                      basis_status=())
    rep = verify_optimality(fit, d)
    assert rep.max_dual_box_violation == 0
    assert not rep.complementary_slackness_ok
    assert 0 in rep.residual_sign_violations


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(3, 12), st.integers(1, 4),
       st.sampled_from([0.1, 0.25, 0.5, 0.8]), st.sampled_from([0.0, 0.3, 1.0, 5.0]))
def test_postconditions(seed, n, p, u, lam):
    rng = np.random.default_rng(seed)
    d = build_dataset(rng.standard_normal((n, p)), rng.standard_normal(n))
    fit = solve_qr_lp(d, u, lam)
    assert len(fit.support) <= min(n, p)
    assert np.all(fit.dual_scores >= u - 1) and np.all(fit.dual_scores <= u)
    assert 0 <= fit.duality_gap + 1e-15 and fit.duality_gap <= gap_tol(fit.primal_objective)
    assert fit.n_interpolated == len(fit.support)
    assert len(fit.basis_status) == n + p
    assert verify_optimality(fit, d).complementary_slackness_ok


def test_objective_nondecreasing_in_lambda():
    d = gaussian_dataset(40, 15, seed=3)
    values = [solve_qr_lp(d, 0.3, lam).primal_objective for lam in np.linspace(0, 30, 16)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_unpenalized_fit_interpolates_p_points():
    d = gaussian_dataset(30, 4, seed=11)
    fit = solve_qr_lp(d, 0.6, 0.0)
    assert fit.n_interpolated == 4
    assert len(fit.support) == 4


def test_duplicated_response_still_optimal():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((12, 3))
    y = np.repeat(rng.standard_normal(4), 3)
    d = build_dataset(X, y)
    fit = solve_qr_lp(d, 0.5, 0.5)
    value, _ = vertex_enumeration(X, y, 0.5, 0.5)
    assert fit.primal_objective == pytest.approx(value, abs=1e-9)
    assert verify_optimality(fit, d).complementary_slackness_ok


def test_restrict_and_exempt_intercept():
    d = gaussian_dataset(50, 8, seed=2)
    fit = solve_qr_lp(d, 0.5, 0.0, restrict=[0, 2])
    assert set(fit.support) <= {0, 2}
    assert verify_optimality(fit, d).complementary_slackness_ok
    empty = solve_qr_lp(d, 0.5, 0.0, restrict=[])
    assert empty.support == ()
    # a huge penalty leaves only the exempt intercept
    ex = solve_qr_lp(d, 0.5, 1e6, exempt_intercept=True)
    assert ex.support == (0,)
    ys = np.sort(d.y)
    assert ex.beta[0] in (ys[24], ys[25])


def test_iteration_cap_raises():
    d = gaussian_dataset(60, 20, seed=4)
    with pytest.raises(SolverError):
        solve_qr_lp(d, 0.5, 0.0, max_iter=1)


def test_high_dimensional_instance():
    d = gaussian_dataset(100, 400, seed=9)
    fit = solve_qr_lp(d, 0.5, 15.0)
    rep = verify_optimality(fit, d)
    assert rep.complementary_slackness_ok
    assert rep.duality_gap <= gap_tol(fit.primal_objective)
    assert fit.n_interpolated == len(fit.support) <= 100
