import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize_scalar

from periodic_bbm.eigen import (
    BRWModel,
    EigenError,
    PeriodicGenerator,
    assemble_generator,
    brw_front_params,
    brw_gamma,
    brw_transfer,
    find_front_params,
    front_position,
    gamma_bounds,
    gamma_curve,
    principal_eigenpair,
    q_t,
    tilt_drift,
)
from periodic_bbm.env import ConfigError, OffspringLaw, parse_env

SINE = 'g = "1 + 0.5*sin(2*pi*x)"'
DRIFT = 'g = 1.0\nmu = "0.2*sin(2*pi*x)"'

# Fourier-Galerkin values, 65 modes (see fourier_gamma below)
SINE_GAMMA = {0.5: 1.1311745225542393, 1.0: 1.505748775826576, 2.0: 3.0045058436613603}
SINE_LAMBDA_STAR = 1.41918291
SINE_V_STAR = 1.41792755
DRIFT_LAMBDA_STAR = 1.4150035725
DRIFT_V_STAR = 1.4130229687


def fourier_gamma(lam, g_hat, mu_hat=None, modes=32):
    """Principal eigenvalue of the unit-volatility generator in the Fourier basis.

    g_hat / mu_hat map a frequency k to the coefficient of exp(2 pi i k x).
    """
    ks = np.arange(-modes, modes + 1)
    size = ks.size
    a = np.zeros((size, size), dtype=complex)
    mu_hat = mu_hat or {}
    for i, k in enumerate(ks):
        w = 2j * math.pi * k
        a[i, i] += 0.5 * w * w + lam * w + 0.5 * lam * lam
        for j, kk in enumerate(ks):
            d = k - kk
            a[i, j] += g_hat.get(d, 0.0)
            wk = 2j * math.pi * kk
            a[i, j] += mu_hat.get(d, 0.0) * (wk + lam)
    return float(np.max(np.linalg.eigvals(a).real))


SINE_HAT = {0: 1.0, 1: 0.25 / 1j, -1: -0.25 / 1j}
DRIFT_MU_HAT = {1: 0.1 / 1j, -1: -0.1 / 1j}


@pytest.fixture(scope="module")
def sine():
    return parse_env(SINE)


def test_oracle_self_check():
    # g = 1 reduces the oracle to lam^2/2 + 1
    assert fourier_gamma(1.3, {0: 1.0}) == pytest.approx(1.3**2 / 2 + 1, abs=1e-12)
    for lam, want in SINE_GAMMA.items():
        assert fourier_gamma(lam, SINE_HAT) == pytest.approx(want, abs=1e-12)


def test_constant_pairs():
    env = parse_env('g = 1.0', n_grid=64)
    gen = PeriodicGenerator(env, 64)
    ep = gen.eigenpair(math.sqrt(2))
    assert ep.gamma == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(ep.psi.samples, 1.0, atol=1e-10)
    ep0 = gen.eigenpair(0.0)
    assert ep0.gamma == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(ep0.psi.samples, 1.0, atol=1e-10)


def test_gamma_curve_constant():
    curve = gamma_curve(parse_env('g = 1.0', n_grid=32), [0.0, 1.0, 2.0], n_grid=32)
    assert np.allclose(curve.gammas, [1.0, 1.5, 3.0], atol=1e-12)


@pytest.mark.parametrize("lam", sorted(SINE_GAMMA))
def test_sine_gamma_against_fourier(sine, lam):
    assert PeriodicGenerator(sine, 1024).gamma(lam) == pytest.approx(SINE_GAMMA[lam], abs=1e-6)


def test_sine_gamma_richardson():
    env = parse_env(SINE, n_grid=4096)
    g2 = PeriodicGenerator(env, 2048).gamma(1.0)
    g4 = PeriodicGenerator(env, 4096).gamma(1.0)
    extrapolated = (4 * g4 - g2) / 3
    assert abs(extrapolated - SINE_GAMMA[1.0]) < 1e-6
    assert abs(g4 - g2) < 1e-6


def test_second_order_refinement(sine):
    errs = [abs(PeriodicGenerator(parse_env(SINE, n_grid=n), n).gamma(1.0) - SINE_GAMMA[1.0])
            for n in (32, 64, 128)]
    assert errs[0] / errs[1] >= 3.5
    assert errs[1] / errs[2] >= 3.5


def test_gamma_bounds_and_convexity(sine):
    lams = np.round(np.arange(1, 51) * 0.1, 10)
    curve = gamma_curve(sine, lams, n_grid=256)
    assert np.all(curve.gammas >= lams**2 / 2 + 0.5 - 1e-12)
    assert np.all(curve.gammas <= lams**2 / 2 + 1.5 + 1e-12)
    assert np.min(np.diff(curve.gammas, 2)) >= -1e-8
    lo, hi = gamma_bounds(sine, 2.0)
    assert lo == pytest.approx(2.5, abs=1e-9) and hi == pytest.approx(3.5, abs=1e-9)


def test_drift_bounds_hold():
    env = parse_env(DRIFT, n_grid=256)
    gen = PeriodicGenerator(env, 256)
    for lam in (0.3, 1.0, 3.0):
        lo, hi = gamma_bounds(env, lam)
        assert lo <= gen.gamma(lam) <= hi


def test_front_params_constant():
    fp = find_front_params(parse_env('g = 1.0', n_grid=16), n_grid=16)
    assert fp.lambda_star == pytest.approx(math.sqrt(2), abs=1e-8)
    assert fp.v_star == pytest.approx(math.sqrt(2), abs=1e-12)
    assert fp.log_coeff == pytest.approx(3 / (2 * math.sqrt(2)), abs=1e-8)
    fp3 = find_front_params(parse_env('g = 3.0', n_grid=16), n_grid=16)
    assert fp3.lambda_star == pytest.approx(math.sqrt(6), abs=1e-8)
    assert fp3.v_star == pytest.approx(math.sqrt(6), abs=1e-12)


def test_front_params_sine(sine):
    fp = find_front_params(sine)
    assert fp.lambda_star == pytest.approx(SINE_LAMBDA_STAR, abs=1e-6)
    assert fp.v_star == pytest.approx(SINE_V_STAR, abs=1e-7)
    assert fp.stationarity_gap <= 1e-5
    # brute-force scan with the Fourier oracle
    lams = np.arange(0.5, 3.0 + 1e-9, 1e-3)
    ratios = np.array([fourier_gamma(l, SINE_HAT, modes=8) / l for l in lams])
    i = int(np.argmin(ratios))
    assert abs(lams[i] - fp.lambda_star) < 1e-3
    assert abs(ratios[i] - fp.v_star) < 1e-3


def test_front_params_drift():
    fp = find_front_params(parse_env(DRIFT))
    assert fp.lambda_star == pytest.approx(DRIFT_LAMBDA_STAR, abs=1e-6)
    assert fp.v_star == pytest.approx(DRIFT_V_STAR, abs=1e-7)
    ref = minimize_scalar(lambda l: fourier_gamma(l, {0: 1.0}, DRIFT_MU_HAT, 16) / l,
                          bracket=(1.0, 1.4, 2.0), tol=1e-10)
    assert ref.fun == pytest.approx(DRIFT_V_STAR, abs=1e-8)


def test_front_position_and_q():
    fp = find_front_params(parse_env('g = 1.0', n_grid=8), n_grid=8)
    t = math.e**2
    assert front_position(fp, t) == pytest.approx(math.sqrt(2) * t - 3 / (2 * math.sqrt(2)) * 2,
                                                  rel=1e-8)
    assert front_position(fp, 1.0) == fp.v_star
    assert abs(q_t(fp, 1e6) - fp.v_star) < 1e-4
    with pytest.raises(ValueError):
        front_position(fp, 0.5)


@settings(max_examples=25, deadline=None)
@given(s=st.integers(0, 63))
def test_shift_covariance(s):
    env = parse_env(SINE, n_grid=64)
    shifted = env.shifted(s / 64)
    a = PeriodicGenerator(env, 64).eigenpair(1.2)
    b = PeriodicGenerator(shifted, 64).eigenpair(1.2)
    assert abs(a.gamma - b.gamma) < 1e-8
    assert np.allclose(np.roll(a.psi.samples, -s), b.psi.samples, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(0.0, 4.0), n=st.sampled_from([8, 16, 64, 300]))
def test_perron_positivity(lam, n):
    ep = PeriodicGenerator(parse_env(SINE, n_grid=n), n).eigenpair(lam)
    assert np.all(ep.psi.samples > 0)
    h = ep.psi.h
    assert np.sum(ep.psi.samples) * h == pytest.approx(1.0, rel=1e-10)


def test_principal_eigenpair_rejects_non_perron():
    # negative off-diagonal entries make the top eigenvector (1, -1)
    with pytest.raises(EigenError, match="mixed signs"):
        principal_eigenpair(np.array([[0.0, -1.0], [-1.0, 0.0]]), 1e-9, method="dense")


def test_assemble_generator_row_sums():
    env = parse_env(SINE, n_grid=32)
    m = assemble_generator(env, 0.0, 32)
    x = np.arange(32) / 32
    assert np.allclose(m.sum(axis=1), 1 + 0.5 * np.sin(2 * np.pi * x), atol=1e-12)


def test_tilt_drift_constant():
    ep = PeriodicGenerator(parse_env('g = 1.0', n_grid=32), 32).eigenpair(math.sqrt(2))
    td = tilt_drift(ep)
    assert np.allclose(td.phi.samples, math.sqrt(2), atol=1e-10)
    assert td.residual < 1e-10
    ep = PeriodicGenerator(parse_env('g = 1.0', n_grid=32), 32).eigenpair(0.7)
    assert np.allclose(tilt_drift(ep).phi.samples, 0.7, atol=1e-10)


def test_tilt_residual_order(sine):
    fp = find_front_params(sine, n_grid=256)
    res = []
    for n in (256, 512):
        ep = PeriodicGenerator(parse_env(SINE, n_grid=n), n).eigenpair(fp.lambda_star)
        res.append(tilt_drift(ep).residual)
    assert math.log2(res[0] / res[1]) >= 1.8


# --- branching random walk --------------------------------------------------------

def brw(kernel, L=1, probs=(0, 0, 1)):
    return BRWModel(L, np.array(kernel, dtype=float),
                    OffspringLaw([list(probs)], period=float(L), min_children=1))


def test_transfer_simple_walk():
    q = brw_transfer(brw([[0.5, 0, 0.5]]), 0.8).entries
    assert q.shape == (1, 1)
    assert q[0, 0] == pytest.approx(2 * math.cosh(0.8), rel=1e-14)


def test_transfer_row_sums_at_zero():
    model = brw([[0.2, 0.3, 0.5], [0.6, 0.1, 0.3], [0.1, 0.1, 0.8]], L=3)
    assert np.allclose(brw_transfer(model, 0.0).entries.sum(axis=1), 2.0)


def test_transfer_lazy_enumeration():
    model = brw([[0.25, 0.5, 0.25]], L=2)
    lam = 0.6
    q = brw_transfer(model, lam).entries
    want = np.zeros((2, 2))
    for x in range(2):
        for step, p in ((-1, 0.25), (0, 0.5), (1, 0.25)):
            want[x, (x + step) % 2] += 2 * p * math.exp(lam * step)
    assert np.allclose(q, want, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(lam=st.floats(0.0, 5.0), pl=st.floats(0.0, 1.0), ps=st.floats(0.0, 1.0),
       rho=st.sampled_from([2, 3]))
def test_brw_gamma_closed_form_l1(lam, pl, ps, rho):
    ps = ps * (1 - pl)
    pr = 1 - pl - ps
    probs = [0] * rho + [1]
    model = brw([[pl, ps, pr]], probs=probs)
    want = math.log(rho * (pl * math.exp(-lam) + ps + pr * math.exp(lam)))
    assert brw_gamma(model, lam) == pytest.approx(want, abs=1e-10)


def test_lazy_front_params_bisection():
    fp = brw_front_params(brw([[0.25, 0.5, 0.25]]))

    def stationarity(l):
        return l * math.sinh(l) / (1 + math.cosh(l)) - math.log(1 + math.cosh(l))
    lam = brentq(stationarity, 0.5, 5.0, xtol=1e-14)
    assert fp.attained
    assert fp.lambda_star == pytest.approx(lam, abs=1e-6)
    assert fp.v_star == pytest.approx(math.log(1 + math.cosh(lam)) / lam, abs=1e-10)
    assert fp.lambda_star == pytest.approx(2.0904564766, abs=1e-6)
    assert fp.v_star == pytest.approx(0.7799442711232809, abs=1e-10)


def test_simple_walk_not_attained():
    assert not brw_front_params(brw([[0.5, 0, 0.5]])).attained


def test_right_drift_not_attained():
    model = brw([[0, 0, 1]])
    assert brw_gamma(model, 1.7) == pytest.approx(math.log(2) + 1.7, abs=1e-12)
    assert not brw_front_params(model).attained


def test_reducible_kernel_rejected():
    with pytest.raises(ConfigError, match="reducible"):
        brw_front_params(brw([[0, 0, 1], [0, 1, 0]], L=2))
