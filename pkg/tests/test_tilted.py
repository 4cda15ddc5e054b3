import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from periodic_bbm.eigen import PeriodicGenerator, find_front_params
from periodic_bbm.env import parse_env
from periodic_bbm.tilted import (
    BarrierQuery,
    TiltedPath,
    continuous_barrier,
    estimate_barrier,
    estimate_barrier_curve,
    renewal_times,
    sample_T1,
    simulate_tilted,
    tilted_endpoints,
)

SINE = 'g = "1 + 0.5*sin(2*pi*x)"'


def star_pair(text, n=256):
    env = parse_env(text, n_grid=n)
    fp = find_front_params(env, n_grid=n)
    return PeriodicGenerator(env, n).eigenpair(fp.lambda_star), fp


@pytest.fixture(scope="module")
def flat():
    return star_pair('g = 1.0', 16)


@pytest.fixture(scope="module")
def sine():
    return star_pair(SINE)


def test_zero_horizon(flat):
    path = simulate_tilted(flat[0], 0.3, 0.0, seed=1)
    assert path.values.tolist() == [0.3]
    assert path.horizon == 0.0


def test_path_length_and_reproducible(sine):
    a = simulate_tilted(sine[0], 0.0, 2.5, dt=1e-2, seed=7, index=3)
    b = simulate_tilted(sine[0], 0.0, 2.5, dt=1e-2, seed=7, index=3)
    assert a.values.size == 251
    assert a.horizon == pytest.approx(2.5)
    assert np.array_equal(a.values, b.values)
    c = simulate_tilted(sine[0], 0.0, 2.5, dt=1e-2, seed=8, index=3)
    assert not np.array_equal(a.values, c.values)


def test_bad_dt(flat):
    with pytest.raises(ValueError):
        simulate_tilted(flat[0], 0.0, 1.0, dt=0.05)


def test_endpoints_match_paths(sine):
    ends = tilted_endpoints(sine[0], 0.2, 1.0, 5, dt=1e-2, seed=3)
    paths = [simulate_tilted(sine[0], 0.2, 1.0, dt=1e-2, seed=3, index=i).values[-1]
             for i in range(5)]
    assert np.allclose(ends, paths, atol=1e-12)


def test_flat_speed(flat):
    ends = tilted_endpoints(flat[0], 0.0, 100.0, 100, dt=1e-2, seed=11)
    rate = ends / 100.0
    stderr = rate.std(ddof=1) / math.sqrt(rate.size)
    assert abs(rate.mean() - math.sqrt(2)) <= 3 * stderr


def test_sine_law_of_large_numbers(sine):
    ends = tilted_endpoints(sine[0], 0.0, 2000.0, 100, dt=1e-2, seed=12)
    assert abs(ends.mean() / 2000.0 / sine[1].v_star - 1) < 0.02


def test_renewal_injected_path():
    path = TiltedPath(0.0, 1e-3, 2.0 * np.arange(5001) * 1e-3, seed=0)
    rec = renewal_times(path, 10, 2.0)
    assert np.allclose(rec.T, np.arange(1, 11) / 2.0, atol=1e-12)
    assert np.allclose(rec.S, 0.0, atol=1e-12)
    with pytest.raises(ValueError, match="not reached"):
        renewal_times(path, 11, 2.0)


def test_flat_mean_T1(flat):
    T = sample_T1(flat[0], 10**4, dt=1e-3, seed=21)
    stderr = T.std(ddof=1) / 100
    assert abs(T.mean() - 1 / math.sqrt(2)) <= 3 * stderr


def test_T1_exponential_tail(sine):
    T = sample_T1(sine[0], 10**4, dt=1e-2, seed=22)
    tail = [np.mean(T >= t) for t in (2.0, 4.0, 8.0)]
    assert tail[1] <= tail[0] ** 2 * 1.5 + 1e-4
    assert tail[2] <= tail[1] ** 2 * 1.5 + 1e-4


def test_renewal_walk_is_centered_and_iid(sine):
    ep, fp = sine
    S, inc = [], []
    for i in range(60):
        path = simulate_tilted(ep, 0.0, 110.0, dt=1e-2, seed=31, index=i)
        rec = renewal_times(path, 100, fp.v_star)
        assert np.all(np.diff(rec.T) > 0)
        S.append(rec.S[-1] / 100)
        inc.append(np.diff(rec.T))
    S = np.array(S)
    assert abs(S.mean()) <= 3 * S.std(ddof=1) / math.sqrt(S.size) + 2e-3
    inc = np.array(inc)
    assert ks_2samp(inc[:, :49].ravel(), inc[:, 49:].ravel()).pvalue > 1e-3


def test_translation_invariance(sine):
    a = tilted_endpoints(sine[0], 0.3, 10.0, 10**4, dt=1e-2, seed=41) - 0.3
    b = tilted_endpoints(sine[0], 1.3, 10.0, 10**4, dt=1e-2, seed=42) - 1.3
    assert ks_2samp(a, b).pvalue > 1e-3


def test_barrier_query_validation():
    with pytest.raises(ValueError):
        BarrierQuery(0, 1.0)
    with pytest.raises(ValueError):
        BarrierQuery(10, -1.0)
    with pytest.raises(ValueError):
        BarrierQuery(10, 1.0, a=0.0)
    with pytest.raises(ValueError):
        BarrierQuery(100, 1.0, d_N=1.0)
    BarrierQuery(100, 1.0, d_N=0.4)


def test_barrier_needs_trials(sine):
    with pytest.raises(ValueError):
        estimate_barrier(sine[0], BarrierQuery(8, 2.0), trials=100)


def test_barrier_inactive_for_large_y(sine):
    N = 16
    y = 10 * math.sqrt(N)
    p_bar, _ = estimate_barrier(sine[0], BarrierQuery(N, y, z=y, a=1.0), 10**4, seed=5, dt=1e-2)
    # without the barrier the event is S_N in [0, 1]; estimate it from the renewal walk
    ep, fp = sine
    hits = 0
    for i in range(10**4 // 20):
        path = simulate_tilted(ep, 0.0, 40.0, dt=1e-2, seed=5, index=i)
        s = renewal_times(path, N, fp.v_star).S[-1]
        hits += 0 <= s <= 1
    p_free = hits / (10**4 // 20)
    assert abs(p_bar - p_free) < 4 * math.sqrt(p_free * (1 - p_free) / 500) + 0.01


def test_barrier_empty_event(sine):
    p, err = estimate_barrier(sine[0], BarrierQuery(8, 0.0, z=1e6), 10**4, seed=6, dt=1e-2)
    assert p == 0.0 and err > 0


def test_barrier_decays_with_N(sine):
    curve = estimate_barrier_curve(sine[0], [8, 16, 32], 2.0, trials=10**4, seed=7, dt=1e-2)
    p = [c[0] for c in curve]
    assert p[0] > p[1] > p[2] > 0
    slope = np.polyfit(np.log([8, 16, 32]), np.log(p), 1)[0]
    assert -1.8 <= slope <= -0.8


def test_barrier_dt_refinement(sine):
    q = BarrierQuery(8, 2.0)
    a = estimate_barrier(sine[0], q, 10**4, seed=8, dt=1e-2)
    b = estimate_barrier(sine[0], q, 10**4, seed=9, dt=5e-3)
    assert abs(a[0] - b[0]) < 2 * math.hypot(a[1], b[1]) + 0.01


def test_continuous_barrier(sine):
    ep, fp = sine
    p, _ = continuous_barrier(ep, 16.0, 2.0, 2.0 + fp.v_star * 16 + 50, 10**4, seed=9, dt=1e-2)
    assert p == 0.0
    p2, e2 = continuous_barrier(ep, 16.0, 2.0, 0.0, 10**4, seed=10, dt=1e-2)
    p4, e4 = continuous_barrier(ep, 16.0, 4.0, 0.0, 10**4, seed=10, dt=1e-2)
    assert p2 > 0 and p4 > p2
    with pytest.raises(ValueError):
        continuous_barrier(ep, 2.0, 2.0, 0.0, 10**4)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), index=st.integers(0, 10**6))
def test_keyed_streams_are_reproducible(seed, index):
    ep = PeriodicGenerator(parse_env('g = 1.0', n_grid=8), 8).eigenpair(math.sqrt(2))
    a = simulate_tilted(ep, 0.0, 0.1, dt=1e-2, seed=seed, index=index).values
    b = simulate_tilted(ep, 0.0, 0.1, dt=1e-2, seed=seed, index=index).values
    assert np.array_equal(a, b)
