import math
import warnings

import mpmath
import numpy as np
import pytest
from scipy import integrate, special

from ubmlsmc import bip_model as bm
from ubmlsmc import oracle
from ubmlsmc.oracle import LogDomainError, QuadratureError, ToyClosedForm

mpmath.mp.dps = 40


@pytest.fixture(scope="module")
def cf(toy):
    return ToyClosedForm.from_spec(toy)


def _log_marginal_by_quad(cf, theta):
    """log of the Lebesgue integral over [-1, 1] of the unnormalized toy posterior."""
    lt = math.log(theta)

    def f(u):
        r = cf.g * u - cf.y
        return math.exp(0.5 * cf.m * lt - 0.5 * theta * float(r @ r) - lt - lt**2 / (2 * cf.sigma**2))

    val, _ = integrate.quad(f, -1.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return math.log(val)


def _dropped_constant(cf):
    return 0.5 * math.log(math.pi / 2.0) - math.log(cf.gnorm)


# -- error function -------------------------------------------------------------------

ERF_POINTS = [-5.5, -3.1, -2.0, -1.3, -0.7, -0.2, -1e-3, 1e-8, 0.05, 0.3,
              0.5, 0.9, 1.0, 1.5, 2.2, 2.9, 3.6, 4.4, 5.8, 7.5]


@pytest.mark.parametrize("x", ERF_POINTS)
def test_erf_against_high_precision(x):
    ref = float(mpmath.erf(mpmath.mpf(x)))
    assert abs(special.erf(x) - ref) <= 1e-12


@pytest.mark.parametrize("a,b", [(0.5, -0.3), (3.0, 2.0), (9.0, 8.5), (30.0, 27.0),
                                 (-27.0, -30.0), (0.1, -20.0), (40.0, -40.0)])
def test_log_erf_difference(a, b):
    # enough digits that the reference itself survives the cancellation in the tails
    with mpmath.workdps(500):
        ref = mpmath.log(mpmath.erf(mpmath.mpf(a)) - mpmath.erf(mpmath.mpf(b)))
    assert oracle._log_erf_diff(a, b) == pytest.approx(float(ref), rel=1e-12, abs=1e-12)


def test_log_erf_difference_rejects_empty_bracket():
    with pytest.raises(LogDomainError):
        oracle._log_erf_diff(0.3, 0.3)


# -- closed-form marginal ---------------------------------------------------------------

@pytest.mark.parametrize("theta", [0.05, 0.5, 2.0, 7.0, 40.0])
def test_log_marginal_matches_adaptive_quadrature(cf, theta):
    expect = _log_marginal_by_quad(cf, theta)
    got = oracle.toy_log_marginal(theta, cf) + _dropped_constant(cf)
    assert got == pytest.approx(expect, rel=1e-8)


def test_symmetric_data_bracket(cf):
    sym = ToyClosedForm(g=cf.g, y=np.zeros_like(cf.y))
    theta = 1.7
    s = math.sqrt(theta / 2.0) * sym.gnorm
    lt = math.log(theta)
    expect = 0.5 * (sym.m - 3) * lt - lt**2 / 2 + math.log(2.0 * special.erf(s))
    assert oracle.toy_log_marginal(theta, sym) == pytest.approx(expect, rel=1e-13)
    assert sym.center == 0.0


def test_fixture_values(cf):
    assert oracle.toy_log_marginal(2.0, cf) == pytest.approx(-3.373383756092779, rel=1e-11)
    assert oracle.toy_grad_log_marginal(2.0, cf) == pytest.approx(1.805750953754632, rel=1e-11)


def test_fixture_values_agree_with_quadrature(cf):
    """The frozen fixtures are backed by an independent numerical integral."""
    h = 1e-4
    fd = (_log_marginal_by_quad(cf, 2.0 + h) - _log_marginal_by_quad(cf, 2.0 - h)) / (2 * h)
    assert fd == pytest.approx(1.805750953754632, rel=1e-6)


@pytest.mark.parametrize("theta", [0.1, 0.8, 2.0, 2.354, 5.0, 30.0])
def test_gradient_matches_finite_difference(cf, theta):
    eps = 1e-6
    fd = (oracle.toy_log_marginal(theta + eps, cf) - oracle.toy_log_marginal(theta - eps, cf)) / (2 * eps)
    assert oracle.toy_grad_log_marginal(theta, cf) == pytest.approx(fd, rel=1e-6, abs=1e-7)


@pytest.mark.parametrize("l", range(7))
def test_closed_form_map_bounds_fem_map(cf, toy, l):
    """The FEM solution is nodally exact, so the gap is the linear-interpolation
    error of (x^2 - x) / 2, at most h^2 / 8."""
    h = toy.mesh(l).h
    gap = np.max(np.abs(bm.forward(toy, np.ones(1), l) - cf.g))
    assert gap <= h * h / 8 + 1e-14


def test_invalid_inputs(cf):
    with pytest.raises(ValueError):
        oracle.toy_log_marginal(0.0, cf)
    with pytest.raises(ValueError):
        oracle.toy_grad_log_marginal(-1.0, cf)
    with pytest.raises(ValueError):
        ToyClosedForm(g=np.zeros(3), y=np.ones(3))


# -- MLE -----------------------------------------------------------------------------------

def test_mle_is_stationary(cf):
    th = oracle.mle_toy(cf)
    assert abs(oracle.toy_grad_log_marginal(th, cf)) < 1e-8
    assert th == pytest.approx(2.3539465308639618, rel=1e-9)


def test_mle_is_local_maximum(cf):
    th = oracle.mle_toy(cf)
    top = oracle.toy_log_marginal(th, cf)
    for f in (1 - 1e-3, 1 + 1e-3):
        assert oracle.toy_log_marginal(th * f, cf) < top


def test_mle_near_data_generating_value(cf):
    # with 50 observations the precision estimate has relative spread ~ sqrt(2/50) = 0.2
    assert abs(oracle.mle_toy(cf) / 2.0 - 1.0) < 3 * math.sqrt(2.0 / 50)


def test_boundary_mle_warns(cf):
    with pytest.warns(RuntimeWarning):
        oracle.mle_toy(cf, lo=-10.0, hi=-5.0)


# -- tensor quadrature -----------------------------------------------------------------------

def test_unit_integrand_gives_one(general):
    q = oracle.quadrature_expectation(general, 0.3, 2, fn=lambda obs, u: np.ones(len(u)))
    assert q.expectation[0] == pytest.approx(1.0, rel=1e-14)


def test_toy_normalizer_tracks_closed_form(toy, cf):
    """The quadrature normalizer differs from the closed form by the dropped constant
    plus the interpolation error of the finite-element map, which shrinks with level."""
    thetas = (0.5, 1.0, 2.0, 4.0)
    for l, tol in ((6, 1e-3), (10, 5e-6)):
        diffs = [oracle.quadrature_expectation(toy, th, l).log_z - oracle.toy_log_marginal(th, cf)
                 for th in thetas]
        assert np.ptp(diffs) < tol
        assert np.mean(diffs) == pytest.approx(_dropped_constant(cf), abs=tol)


def test_toy_quadrature_gradient_matches_closed_form(toy, cf):
    q = oracle.quadrature_expectation(toy, 2.0, 12)
    assert q.expectation[0] == pytest.approx(oracle.toy_grad_log_marginal(2.0, cf), rel=1e-6)


def test_quadrature_converges_under_doubling(general):
    ref = oracle.quadrature_expectation(general, 0.3, 4).expectation[0]
    errs = [abs(oracle.quadrature_at(general, 0.3, 4, n).expectation[0] - ref) for n in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]


def test_general_reference_value(general):
    q = oracle.quadrature_expectation(general, 0.3, 4)
    assert q.expectation[0] == pytest.approx(1.51925, abs=5e-6)
    assert np.isfinite(q.log_z)


def test_quadrature_failure_and_limits(general):
    with pytest.raises(QuadratureError):
        oracle.quadrature_expectation(general, 0.3, 4, rtol=1e-30, max_nodes=64)
    with pytest.raises(ValueError):
        oracle.quadrature_expectation(general, 0.3, 4, n_nodes=4)
    big = bm.general_example(K=3, y=general.y)
    with pytest.raises(ValueError):
        oracle.quadrature_expectation(big, 0.3, 2)


def test_quadrature_mle_toy(toy, cf):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        th = oracle.mle_quadrature(toy, 12)
    assert th == pytest.approx(oracle.mle_toy(cf), rel=1e-5)
