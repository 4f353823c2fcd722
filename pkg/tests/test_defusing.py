from fractions import Fraction

import numpy as np
import pytest

from hgmode.defusing import (DefusePolicy, DefusingError, defuse_initial_value, defused_solve, error_bound,
                             matrix_factorial, windowed_defused_solve)
from hgmode.linalg import EigenTieError
from hgmode.operators import FirstOrderSystem, Grid, companion_system, parse_operator
from hgmode.precision import get_precision
from hgmode.reference import (airy_ai, airy_ai_prime, easy_system, hkn_gauged_initial, hkn_gauged_oracle,
                              hkn_gauged_system)
from hgmode.steppers import Stepper, solve_ivp

AIRY = companion_system(parse_operator("d^2 - t"))


def norm(v):
    return max(abs(x) for x in np.ravel(v))


@pytest.fixture(scope="module")
def airy_mf30():
    prec = get_precision(30)
    return matrix_factorial(Stepper.rk4(), AIRY, Grid(0, "0.001", 10000), prec)


def test_constant_euler_two_steps(prec):
    S = FirstOrderSystem.from_lists([["1", "2"], ["0", "-1"]])
    h = prec.real("0.1")
    mf = matrix_factorial(Stepper.euler(), S, Grid(0, "0.1", 2), prec, eigen=False)
    step = prec.eye(2) + h * S.matrix(0, prec)
    assert norm(mf.Q - step @ step) <= prec.tol(1)


def test_factorial_matches_propagation(prec):
    grid = Grid(-1, "0.01", 300)
    mf = matrix_factorial(Stepper.rk4(), AIRY, grid, prec, eigen=False)
    rng = np.random.default_rng(1)
    for _ in range(3):
        F0 = prec.array(rng.standard_normal(2))
        end = solve_ivp(Stepper.rk4(), AIRY, F0, grid, prec).states[-1]
        assert norm(mf.Q @ F0 - end) <= prec.tol(6) * norm(mf.Q) * norm(F0)


def test_checkpoints_reproduce_trajectory(prec):
    grid = Grid(0, "0.01", 500)
    mf = matrix_factorial(Stepper.rk4(), AIRY, grid, prec, eigen=False, block=50)
    F0 = prec.array([1, -1])
    tab = solve_ivp(Stepper.rk4(), AIRY, F0, grid, prec)
    for P, i in zip(mf.partials, mf.checkpoints):
        direct = tab.states[i]
        assert norm(P @ F0 - direct) <= prec.tol(5) * norm(direct)


def test_easy_system_eigen_tie():
    prec = get_precision(30)
    with pytest.raises(EigenTieError):
        matrix_factorial(Stepper.rk4(), easy_system(), Grid(0, "0.01", 500), prec)


def test_airy_eigen_structure(airy_mf30):
    lam = airy_mf30.eigenvalues
    assert lam[0] > 1e9 and 0 < lam[1] < 1e-6
    assert airy_mf30.eigen.residual <= 1e-26


def test_airy_defused_vector_uses_v2(airy_mf30):
    prec = airy_mf30.prec
    F0 = prec.array(["0.355", "-0.259"])
    d = defuse_initial_value(airy_mf30, F0)
    a, b = airy_mf30.eigenvectors[:, 1]
    assert d.m == 2
    assert d.F0[0] == F0[0]
    assert abs(d.F0[1] - prec.real("0.355") * b / a) <= prec.tol(4)


def test_defuse_is_projection(airy_mf30):
    prec = airy_mf30.prec
    v2 = airy_mf30.eigenvectors[:, 1] * 3
    d = defuse_initial_value(airy_mf30, v2)
    assert norm(d.F0 - v2) <= prec.tol(6)
    again = defuse_initial_value(airy_mf30, d.F0)
    assert norm(again.F0 - d.F0) <= prec.tol(6)


def test_nothing_retained(airy_mf30):
    with pytest.raises(DefusingError):
        defuse_initial_value(airy_mf30, airy_mf30.eigenvectors[:, 0])


def test_threshold_policy(airy_mf30):
    pol = DefusePolicy(cut="threshold", tau=1.0)
    assert pol.first_kept(airy_mf30.eigenvalues) == 2
    assert DefusePolicy(cut="threshold", tau=1e-20).first_kept(airy_mf30.eigenvalues) == 3


def test_policy_validation():
    with pytest.raises(ValueError):
        DefusePolicy(cut="nope")
    with pytest.raises(ValueError):
        DefusePolicy(scaling="nope")
    with pytest.raises(ValueError):
        DefusePolicy(cut="threshold", tau=0)


def test_filtering_removes_growth(airy_mf30):
    prec = airy_mf30.prec
    F0 = prec.array(["0.355", "-0.259"])
    d = defuse_initial_value(airy_mf30, F0, DefusePolicy(scaling="unit"))
    assert norm(airy_mf30.Q @ d.F0) <= norm(airy_mf30.Q @ F0)


def _defused_error_check(mf, F0_exact, policy=None):
    """|Q F0' - F(T)| <= ||Q F0'|| + ||F(T)|| + 2 delta, delta from propagating F0_exact."""
    prec = mf.prec
    d = defuse_initial_value(mf, F0_exact, policy)
    QF = mf.Q @ d.F0
    return d, QF


def test_defused_error_check_bound_airy(airy_mf30):
    prec = airy_mf30.prec
    F0 = prec.array([airy_ai(0, prec), airy_ai_prime(0, prec)])
    d = defuse_initial_value(airy_mf30, F0)
    true = prec.array([airy_ai(10, prec), airy_ai_prime(10, prec)])
    delta = norm(airy_mf30.Q @ F0 - true)
    QF = airy_mf30.Q @ d.F0
    actual = prec.sqrt(np.sum((QF - true) ** 2))
    bound = error_bound(airy_mf30, d.F0, prec.sqrt(np.sum(true * true)), delta)
    assert actual <= bound
    # delta = 0 with an exact F0' still bounds the actual error
    assert actual <= error_bound(airy_mf30, d.F0, prec.sqrt(np.sum(true * true)), 0) + 2 * delta


def test_defused_error_check_bound_gauged_hkn():
    prec = get_precision(30)
    S = hkn_gauged_system(10, 1, 1)
    grid = Grid(1, "0.01", 1900)
    mf = matrix_factorial(Stepper.rk4(), S, grid, prec)
    F0 = hkn_gauged_initial(10, 1, 1, 1, prec)
    d = defuse_initial_value(mf, F0)
    Fend = solve_ivp(Stepper.rk4(), S, F0, grid, prec).states[-1]
    true_f = hkn_gauged_oracle(10, 1, 1, prec)(20)
    delta = abs(Fend[0] - true_f)
    QF = mf.Q @ d.F0
    bound = error_bound(mf, d.F0, abs(true_f), delta)
    assert abs(QF[0] - true_f) <= bound


def test_error_bound_trivia(airy_mf30):
    prec = airy_mf30.prec
    z = prec.zeros(2)
    assert error_bound(airy_mf30, z, prec.real(3), prec.real("0.5")) == 4
    a = error_bound(airy_mf30, prec.array([1, 2]), 1, 0)
    b = error_bound(airy_mf30, prec.array([1, 2]), 1, 1)
    assert b >= a
    with pytest.raises(ValueError):
        error_bound(airy_mf30, z, 1, -1)


def test_defused_solve_airy_accuracy():
    prec = get_precision(30)
    tab = defused_solve(Stepper.rk4(), AIRY, Grid(0, "0.001", 10000), prec.array(["0.355", "-0.259"]), prec=prec,
                        record_every=1000)
    f5 = tab.at(5)[0]
    assert abs(f5 - airy_ai(5, prec)) / airy_ai(5, prec) < 1e-3
    assert tab.meta["m"] == 2


def test_single_window_reproduces_defused_solve():
    prec = get_precision(30)
    F0 = prec.array([airy_ai(0, prec), airy_ai_prime(0, prec)])
    grid = Grid(0, "0.001", 6000)
    one = defused_solve(Stepper.rk4(), AIRY, grid, F0, prec=prec, record_every=1000)
    win = windowed_defused_solve(Stepper.rk4(), AIRY, grid, F0, 6000, prec=prec, record_every=1000)
    for a, b in zip(one.states, win.states):
        assert norm(a - b) <= prec.tol(6) * max(1, norm(a))
    assert len(win.meta["windows"]) == 1


def test_rk45_rejected_for_factorial():
    with pytest.raises(ValueError):
        matrix_factorial(Stepper.rk45(), AIRY, Grid(0, "0.1", 10))


@pytest.mark.slow
def test_gauged_hkn_defused_to_large_y():
    """Gauged H^10_1 from exact values at y = 1, relative error below 1e-2 out to y = 1000.

    One factorial over the whole range would need roughly 400 more digits than D = 30,
    so the range is covered in windows of 5000 steps.
    """
    prec = get_precision(30)
    S = hkn_gauged_system(10, 1, 1)
    F0 = hkn_gauged_initial(10, 1, 1, 1, prec)
    grid = Grid(1, "0.001", 999000)
    tab = windowed_defused_solve(Stepper.rk4(), S, grid, F0, 5000, prec=prec, record_every=5000)
    oracle = hkn_gauged_oracle(10, 1, 1, prec)
    worst = 0.0
    for t, row in zip(tab.t, tab.states):
        ref = oracle(Fraction(str(t)).limit_denominator(1000))
        worst = max(worst, float(abs(row[0] - ref) / abs(ref)))
    assert worst < 1e-2
