from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hgmode.precision import get_precision
from hgmode.operators import parse_operator
from hgmode.reference import airy_ai, hkn_operator
from hgmode.variational import (AsymptoticPower, ChebyshevOn, FitError, Monomial, UserExpr, chebyshev_weight,
                                data_matrix, design_matrix, fit_method_b_constrained, fit_method_b_penalized,
                                fit_method_c, gram_matrix, quadrature_loss_bound, loss_value, refined_loss, trapezoid,
                                trial_generators, perturbed_values)

# (d - 1)(d^2 - t): Ai, Bi and e^t span the kernel
AIRY3 = parse_operator("d^3 - d^2 - t*d + t - 1")
AIRY_DATA = [(-4, "-0.0702655329492895"), (-3, "-0.37881429"), (-2, "0.22740743")]


def airy_setup(D):
    prec = get_precision(D)
    return prec, ChebyshevOn(10, -4, 0), trapezoid(-4, 0, 400, prec)


@pytest.fixture(scope="module", params=[16, 30], ids=["D16", "D30"])
def airy_fit(request):
    prec, basis, quad = airy_setup(request.param)
    return prec, basis, quad, fit_method_b_constrained(AIRY3, basis, quad, AIRY_DATA, prec)


def sample(prec):
    return prec.array([Fraction(-4) + Fraction(i, 10) for i in range(41)])


def test_design_matrix_derivative_of_constant():
    prec = get_precision(16)
    G, g = design_matrix(parse_operator("d"), UserExpr(["1"]), trapezoid(0, 1, 10, prec), prec)
    assert G.shape == (11, 1)
    assert np.all(G == 0) and np.all(g == 0)


def test_design_matrix_kernel_member():
    prec = get_precision(30)
    G, _ = design_matrix(parse_operator("d - 1"), UserExpr(["exp(t)"]), trapezoid(0, 2, 20, prec), prec)
    assert max(abs(x) for x in G.ravel()) < prec.tol(2)


def test_design_matrix_hkn_asymptotic_basis_finite():
    prec = get_precision(30)
    quad = trapezoid(10000, 10040, 400, prec)
    G, g = design_matrix(hkn_operator(10, 1, 1), AsymptoticPower(4), quad, prec)
    vals = prec.to_float(G)
    assert np.all(np.isfinite(vals))
    assert np.all(np.abs(vals).max(axis=1) > 0)


def test_asymptotic_basis_rejects_origin():
    prec = get_precision(16)
    with pytest.raises((ArithmeticError, ValueError)):
        design_matrix(hkn_operator(10, 1, 1), AsymptoticPower(4), trapezoid(0, 1, 4, prec), prec)


def test_constrained_airy_fit_accuracy(airy_fit):
    prec, basis, quad, fit = airy_fit
    ts = sample(prec)
    err = max(abs(v - airy_ai(t, prec)) for v, t in zip(fit(ts), ts))
    assert err <= 2e-2
    assert max(abs(r) for r in fit.constraint_residuals) <= prec.tol(8) * 0.38


def test_reported_loss_recomputes(airy_fit):
    prec, basis, quad, fit = airy_fit
    G, g = design_matrix(AIRY3, basis, quad, prec)
    r = G @ fit.coefficients - g
    assert abs(fit.loss - sum(x * x for x in r)) <= prec.tol(8)


def test_recovers_solution_in_span(prec):
    op = parse_operator("d^3")
    basis = Monomial(5)
    exact = [1, -1, 2, 0, 0]
    data = [(p, 1 - p + 2 * p * p) for p in (Fraction(0), Fraction(1, 2), Fraction(1))]
    fit = fit_method_b_constrained(op, basis, trapezoid(0, 1, 50, prec), data, prec)
    for c, e in zip(fit.coefficients, exact):
        assert abs(c - e) <= prec.tol(6)
    assert fit.loss <= prec.tol(6)


def test_duplicate_constraints_rejected():
    prec = get_precision(16)
    data = [(-3, 1), (-3, 1), (-2, 0)]
    with pytest.raises(FitError):
        fit_method_b_constrained(AIRY3, ChebyshevOn(10, -4, 0), trapezoid(-4, 0, 40, prec), data, prec)


def test_too_many_constraints_rejected():
    prec = get_precision(16)
    with pytest.raises(FitError):
        fit_method_b_constrained(AIRY3, Monomial(2), trapezoid(-4, 0, 40, prec), AIRY_DATA, prec)


def test_penalty_limit_reproduces_constrained(airy_fit):
    prec, basis, quad, fit = airy_fit
    pen = fit_method_b_penalized(AIRY3, basis, quad, AIRY_DATA, prec, alpha=1, beta=10**12)
    ts = sample(prec)
    assert max(abs(a - b) for a, b in zip(fit(ts), pen(ts))) <= 1e-4


def test_ridge_dominates():
    prec, basis, quad = airy_setup(16)
    zero = [(p, 0) for p, _ in AIRY_DATA]
    fit = fit_method_b_penalized(AIRY3, basis, quad, zero, prec, gamma=10**6)
    assert max(abs(c) for c in fit.coefficients) == 0
    fit = fit_method_b_penalized(AIRY3, basis, quad, AIRY_DATA, prec, gamma=10**6)
    assert max(abs(c) for c in fit.coefficients) < 1e-5


def test_penalized_argument_checks():
    prec, basis, quad = airy_setup(16)
    for kw in ({"alpha": -1}, {"gamma": -1}, {"alpha": 0, "beta": 0}):
        with pytest.raises(ValueError):
            fit_method_b_penalized(AIRY3, basis, quad, AIRY_DATA, prec, **kw)
    with pytest.raises(FitError):
        fit_method_b_penalized(parse_operator("d"), UserExpr(["1"]), quad, [], prec)


def test_high_rank_monomial_configuration(tmp_path):
    """Rank-11 operator, 30 monomials about 3.8055 and ten data points, all at alpha = beta = 1."""
    from hgmode.operators import load_problem
    path = tmp_path / "rank11.json"
    path.write_text('{"operator": "d^11 + t*d^2 - 3*d + 1", "interval": [3.8, 3.811]}')
    problem = load_problem(path)
    prec = get_precision(40)
    q = np.linspace(0.067160, 0.055971, 10)
    q[1] = 0.065485
    data = [(Fraction(38000 + i, 10000), repr(float(v))) for i, v in zip(range(1, 11), q)]
    quad = trapezoid(Fraction(38, 10), Fraction(3811, 1000), 110, prec)
    fit = fit_method_b_penalized(problem.operator, Monomial(30, "3.8055"), quad, data, prec, alpha=1, beta=1, gamma=0)
    assert fit.loss >= 0 and np.isfinite(float(fit.loss))
    assert float(fit.data_misfit) < 1e-6
    assert len(fit.coefficients) == 30
    assert refined_loss(problem.operator, fit, trapezoid(Fraction(38, 10), Fraction(3811, 1000), 440, prec)) >= 0


def test_gram_matrix_symmetric_and_psd(prec):
    basis = ChebyshevOn(8, -4, 0)
    S = gram_matrix(AIRY3, basis, trapezoid(-4, 0, 80, prec), prec)
    assert np.all(S == S.T)
    rng = np.random.default_rng(3)
    for _ in range(100):
        F = prec.array(rng.normal(size=8))
        assert F @ (S @ F) >= -prec.tol(8)


def test_gram_matrix_of_kernel_members_vanishes():
    prec = get_precision(30)
    S = gram_matrix(parse_operator("d^2"), Monomial(2), trapezoid(0, 1, 10, prec), prec)
    assert np.all(S == 0)


def test_method_c_minimum_norm_when_gram_vanishes():
    prec = get_precision(16)
    basis = Monomial(2)
    S = gram_matrix(parse_operator("d^2"), basis, trapezoid(0, 1, 10, prec), prec)
    fit = fit_method_c(S, basis, [(Fraction(1, 2), 3)], "constrained", prec)
    assert abs(fit.constraint_residuals[0]) < 1e-15
    P, Q = data_matrix(basis, [(Fraction(1, 2), 3)], prec)
    expect = np.linalg.lstsq(P, Q, rcond=None)[0]
    assert np.allclose(fit.coefficients, expect, rtol=0, atol=1e-14)


def test_method_c_rejects_dependent_constraints():
    prec, basis, quad = airy_setup(16)
    S = gram_matrix(AIRY3, basis, quad, prec)
    with pytest.raises(FitError):
        fit_method_c(S, basis, [(-3, 1), (-3, 2)], "constrained", prec)
    with pytest.raises(ValueError):
        fit_method_c(S, basis, AIRY_DATA, "bogus", prec)


def test_method_b_and_c_penalized_agree(airy_fit):
    prec, basis, quad, _ = airy_fit
    b = fit_method_b_penalized(AIRY3, basis, quad, AIRY_DATA, prec, alpha=1, beta=1, gamma=0)
    c = fit_method_c(gram_matrix(AIRY3, basis, quad, prec), basis, AIRY_DATA, "penalized", prec)
    assert max(abs(x - y) for x, y in zip(b.coefficients, c.coefficients)) <= prec.tol(6)


def test_method_c_constrained_matches_method_b(airy_fit):
    prec, basis, quad, fit = airy_fit
    c = fit_method_c(gram_matrix(AIRY3, basis, quad, prec), basis, AIRY_DATA, "constrained", prec)
    ts = sample(prec)
    assert max(abs(x - y) for x, y in zip(fit(ts), c(ts))) <= 1e-6


def test_refined_quadrature_loss_close(airy_fit):
    prec, basis, quad, fit = airy_fit
    ref = refined_loss(AIRY3, fit, trapezoid(-4, 0, 1600, prec))
    assert abs(ref - fit.loss) <= 0.1 * fit.loss
    bound = quadrature_loss_bound(fit, ref)
    assert bound >= fit.loss
    gaps = [prec.real(0), prec.real("1e-8"), prec.real("1e-6")]
    bounds = [quadrature_loss_bound(fit, fit.loss + g) for g in gaps]
    assert bounds == sorted(bounds) and bounds[0] == fit.loss


def test_quadrature_loss_bound_vanishes_for_kernel_fit():
    prec = get_precision(30)
    op = parse_operator("d^2")
    fit = fit_method_b_constrained(op, Monomial(3), trapezoid(0, 1, 20, prec), [(0, 1), (1, 3)], prec)
    assert quadrature_loss_bound(fit, refined_loss(op, fit, trapezoid(0, 1, 80, prec))) <= prec.tol(2)


def _nonzero_rhs_fit(prec):
    op = parse_operator("d^2 + 1", rhs="t^3 + 1")
    basis = Monomial(6)
    quad = trapezoid(0, 1, 60, prec)
    data = [(0, 0), (1, "0.5")]
    return op, basis, quad, data, fit_method_b_constrained(op, basis, quad, data, prec)


def _null_space(P):
    _, s, vt = np.linalg.svd(P)
    return vt[len(s):].T


def test_optimal_along_constraint_null_space(prec):
    op, basis, quad, data, fit = _nonzero_rhs_fit(prec)
    G, g = design_matrix(op, basis, quad, prec)
    P, _ = data_matrix(basis, data, prec)
    Z = prec.array(_null_space(prec.to_float(P)))
    grad = Z.T @ (G.T @ (G @ fit.coefficients - g))
    normG = np.linalg.norm(prec.to_float(G), 2)
    normg = np.linalg.norm(prec.to_float(g))
    assert float(max(abs(x) for x in grad)) <= prec.tol(7) * normG * normg


def test_optimal_against_feasible_perturbations():
    prec = get_precision(16)
    op, basis, quad, data, fit = _nonzero_rhs_fit(prec)
    G, g = design_matrix(op, basis, quad, prec)
    P, _ = data_matrix(basis, data, prec)
    Z = _null_space(P)
    rng = np.random.default_rng(11)
    base = loss_value(G, g, fit.coefficients, prec)
    for _ in range(200):
        delta = Z @ rng.normal(scale=10.0 ** rng.integers(-6, 1), size=Z.shape[1])
        assert base <= loss_value(G, g, fit.coefficients + delta, prec) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=80))
def test_chebyshev_weights_sum(k):
    prec = get_precision(30)
    rule = chebyshev_weight(-1, 1, k, prec)
    assert abs(sum(rule.weights) - prec.pi / 2) <= prec.tol(2)
    assert all(w >= 0 for w in rule.weights)
    assert all(a < b for a, b in zip(rule.nodes[:-1], rule.nodes[1:]))


def test_chebyshev_weight_integrates_semicircle_moments():
    prec = get_precision(30)
    rule = chebyshev_weight(0, 2, 12, prec)
    # int_0^2 sqrt(1 - (t-1)^2) (t-1)^2 dt = pi/8
    vals = (rule.nodes - 1) ** 2
    assert abs(rule.integrate(vals) - prec.pi / 8) <= prec.tol(2)


def test_trapezoid_rule_shape():
    prec = get_precision(16)
    rule = trapezoid(0, 1, 4, prec)
    assert list(rule.weights) == [0.125, 0.25, 0.25, 0.25, 0.125]
    assert rule.integrate(rule.nodes) == 0.5
    with pytest.raises(ValueError):
        trapezoid(1, 0, 4, prec)


def test_trial_streams_reproducible():
    prec = get_precision(16)
    a = [perturbed_values([1.0, 2.0], 1e-3, g, prec) for g in trial_generators(5, 3)]
    b = [perturbed_values([1.0, 2.0], 1e-3, g, prec) for g in trial_generators(5, 3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])
    for v in a:
        assert np.all(np.abs(v / np.array([1.0, 2.0]) - 1) <= 1e-3)
