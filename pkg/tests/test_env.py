import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodic_bbm.env import (
    ConfigError,
    EnvironmentSpec,
    OffspringLaw,
    PeriodicFunction,
    eval_expression,
    parse_env,
)

SINE = 'g = "1 + 0.5*sin(2*pi*x)"'


def test_constant_g():
    env = parse_env('g = "1"')
    assert env.period == 1.0
    assert np.all(env.g.samples == 1.0)
    assert env.g(17.3) == 1.0


def test_sine_bounds():
    lo, hi = parse_env(SINE).g.bounds()
    assert lo == pytest.approx(0.5, abs=1e-12)
    assert hi == pytest.approx(1.5, abs=1e-12)


def test_negative_g_rejected():
    with pytest.raises(ConfigError, match="positive"):
        parse_env('g = "-1"')


def test_unknown_key_and_bad_expression():
    with pytest.raises(ConfigError, match="unknown"):
        parse_env('g = 1.0\nbeta = 2')
    with pytest.raises(ConfigError):
        parse_env('g = "__import__(1)"')
    with pytest.raises(ConfigError):
        parse_env('g = "1 +"')


def test_linear_midpoint():
    f = PeriodicFunction(1.0, [0.0, 1.0])
    assert f(0.25) == 0.5


def test_linear_interpolation_second_order():
    exact = 1 + 0.5 * math.sin(2 * math.pi * 1.37)
    errs = []
    for n in (64, 128):
        f = PeriodicFunction.from_callable(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x), n=n)
        errs.append(abs(f(1.37) - exact))
    assert errs[1] < errs[0] / 3.0
    f = PeriodicFunction.from_callable(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x), n=1024)
    assert f(1.25) == pytest.approx(1.5, abs=1e-12)


def test_trigonometric_mode_is_spectral():
    f = PeriodicFunction.from_callable(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x), n=16,
                                       interpolation="trigonometric")
    x = np.linspace(-3, 3, 101)
    assert np.max(np.abs(f(x) - (1 + 0.5 * np.sin(2 * np.pi * x)))) < 1e-13


def test_bounds_of_samples():
    assert PeriodicFunction(1.0, [2.0, 5.0, 3.0]).bounds() == (2.0, 5.0)
    assert PeriodicFunction.constant(1.0).bounds() == (1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1e3, 1e3, allow_nan=False), k=st.integers(-10**6, 10**6))
def test_periodicity_exact(x, k):
    # a dyadic period keeps x + k * period exact in floating point
    f = PeriodicFunction(2.0, np.random.default_rng(0).random(37))
    y = x + k * 2.0
    if y - k * 2.0 == x:
        assert f(x) == f(y)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-50, 50, allow_nan=False),
       samples=st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=20))
def test_bounds_contain_values(x, samples):
    for mode in ("linear", "trigonometric"):
        f = PeriodicFunction(1.0, samples, mode)
        lo, hi = f.bounds()
        v = f(x)
        assert lo - 1e-9 <= v <= hi + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=8).filter(lambda v: sum(v[2:]) > 0))
def test_offspring_moments(raw):
    p = np.array(raw)
    p[:2] = 0
    p = p / p.sum()
    law = OffspringLaw(p)
    k = np.arange(law.probabilities.shape[1])
    assert abs(law.rho[0] - (law.probabilities[0] * k).sum()) < 1e-12
    assert abs(law.kappa[0] - (law.probabilities[0] * k * k).sum()) < 1e-12
    assert law.generating(0.3, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_offspring_validation():
    with pytest.raises(ConfigError, match="normalized"):
        OffspringLaw([[0, 0, 0.5, 0.4]])
    with pytest.raises(ConfigError, match="zero mass"):
        OffspringLaw([[0, 0.2, 0.8]])
    # BRW laws only need zero mass on 0 children
    assert OffspringLaw([[0, 0.2, 0.8]], min_children=1).rho[0] == pytest.approx(1.8)


def test_offspring_tail_folded():
    law = OffspringLaw([[0, 0, 1 - 1e-14, 0, 1e-14]])
    assert law.probabilities.shape[1] == 3
    assert law.probabilities[0, 2] == 1.0


def test_offspring_table_and_cells():
    env = parse_env("""
g = 1.0
[[offspring]]
position_index = 0
probabilities = [0, 0, 1]
[[offspring]]
position_index = 1
probabilities = [0, 0, 0, 1]
""")
    law = env.offspring
    assert law.rho_at(0.25) == 2.0 and law.rho_at(0.75) == 3.0
    assert law.rho_at(-0.25) == 3.0
    with pytest.raises(ConfigError, match="duplicate"):
        parse_env('g = 1.0\n[[offspring]]\nprobabilities=[0,0,1]\n[[offspring]]\nprobabilities=[0,0,1]')


def test_sample_list_and_period():
    env = parse_env('period = 2.0\ng = [1.0, 2.0, 3.0, 2.0]')
    assert env.period == 2.0
    assert env.g(0.5) == 2.0
    assert env.g(2.5) == 2.0


def test_expression_whitelist():
    x = np.linspace(0, 1, 5)
    assert np.allclose(eval_expression("exp(0*x) + cos(pi*x) - x/2", x), 1 + np.cos(np.pi * x) - x / 2)
    with pytest.raises(ConfigError):
        eval_expression("x**2", x)
    with pytest.raises(ConfigError):
        eval_expression("y", x)


def test_reflection_on_nodes():
    env = parse_env('g = "1 + 0.5*sin(2*pi*x)"\nmu = "0.2*cos(2*pi*x)"')
    r = env.reflected()
    x = env.g.nodes()
    assert np.allclose(r.g(x), env.g(-x), atol=1e-15)
    assert np.allclose(r.mu(x), -env.mu(-x), atol=1e-15)


def test_sigma_must_be_positive():
    with pytest.raises(ConfigError):
        parse_env('g = 1.0\nsigma = "sin(2*pi*x)"')


def test_environment_rejects_unit_offspring():
    with pytest.raises(ConfigError):
        EnvironmentSpec(PeriodicFunction.constant(1.0),
                        offspring=OffspringLaw([[0, 0.5, 0.5]], min_children=1))
