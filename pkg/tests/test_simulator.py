import math

import numpy as np
import pytest

from shortpkt import pgf as P
from shortpkt.analysis import tail_series
from shortpkt.errors import InsufficientDataError, ParameterError
from shortpkt.pgf import Regime, SystemParams, Unit
from shortpkt.simulator import (
    SimConfig,
    deterministic_replay,
    merge_stats,
    simulate,
    simulate_path,
    simulate_replica,
)


def bulk_rate(params):
    return -math.expm1(params.n * math.log1p(-params.lam))


def test_config_validation():
    p = SystemParams(1e-3, 10, 0.1)
    assert SimConfig(p, 1000).warmup == 100
    for kwargs in (dict(horizon=100, warmup=100), dict(horizon=100, warmup=-1),
                   dict(horizon=1000, replicas=0), dict(horizon=1000, seed=-1),
                   dict(horizon=1000, seed=2**64)):
        with pytest.raises(ParameterError):
            SimConfig(p, **kwargs)
    with pytest.raises(ParameterError):
        SimConfig(SystemParams(1e-3, 100, 0.1), horizon=150, warmup=120)


def test_error_free_isolated_packets_take_one_frame():
    path = simulate_path(SystemParams(1e-5, 20, 0.0), 2000, seed=1)
    alone = (path.size == 1) & (path.waiting == 0)
    assert alone.mean() > 0.99
    assert np.all(path.delay[alone] == 1)
    stats = simulate(SimConfig(SystemParams(1e-5, 20, 0.0), 10**8, seed=2))
    assert stats.delay_ccdf.at(2) < 1e-3


def test_pure_retransmission_is_geometric():
    stats = simulate(SimConfig(SystemParams(1e-6, 10, 0.5), 2 * 10**9, seed=3))
    for d in range(1, 8):
        assert stats.delay_ccdf.at(d) == pytest.approx(0.5 ** (d - 1), abs=4 * stats.delay_ccdf.stderr[d - 1] + 2e-3)


def test_sync_ccdf_matches_inversion():
    params = SystemParams(1e-3, 100, 0.05)
    stats = simulate(SimConfig(params, 10**9, seed=4))
    assert stats.bulks_observed > 8 * 10**5
    tail = tail_series(P.delay_pgf(params), stats.delay_ccdf.d_max)
    for d in range(1, stats.delay_ccdf.d_max + 1):
        if tail.at(d) < 1e-4:
            break
        assert abs(stats.delay_ccdf.at(d) - tail.at(d)) <= 3 * stats.delay_ccdf.stderr[d - 1] + 1e-12


@pytest.mark.parametrize("regime", list(Regime))
def test_mean_delay_and_peak_age_match_pgf(regime):
    params = SystemParams(1e-2, 10, 0.1, regime)
    stats = simulate(SimConfig(params, 5 * 10**7, seed=5))
    for est, g in ((stats.mean_delay, P.delay_pgf(params)), (stats.mean_peak_age, P.peak_age_pgf(params))):
        assert abs(est.value - P.mean_from_pgf(g)) < 3 * est.stderr


@pytest.mark.parametrize("regime", list(Regime))
def test_littles_law(regime):
    params = SystemParams(5e-3, 40, 0.3, regime)
    stats = simulate(SimConfig(params, 5 * 10**7, seed=6))
    rate = bulk_rate(params) if regime is Regime.SYNC else params.lam
    predicted = rate * stats.mean_delay.value
    se = math.hypot(stats.mean_occupancy.stderr, rate * stats.mean_delay.stderr)
    assert abs(stats.mean_occupancy.value - predicted) < 3 * se


@pytest.mark.parametrize("regime", list(Regime))
def test_pathwise_invariants(regime):
    params = SystemParams(8e-3, 20, 0.4, regime)
    path = simulate_path(params, 5000, seed=7)
    assert np.all(np.diff(path.departure) > 0)  # FCFS
    assert np.all(path.waiting >= 0)
    assert np.all(path.delay == path.waiting + path.service)
    np.testing.assert_array_equal(path.peak_age[1:],
                                  np.maximum(path.delay[:-1], np.diff(path.arrival)) + path.service[1:])
    if regime is Regime.SYNC:
        assert np.all(path.peak_age[1:] >= path.delay[:-1] + 1)
        assert np.all(path.service >= path.size)
        assert path.attempts.sum() == path.service.sum()
        assert path.unit is Unit.FRAMES
    else:
        assert np.all(path.peak_age[1:] >= params.n)
        assert np.all(path.service % params.n == 0)
    q = path.occupancy(0, int(path.departure[-1]))
    assert q.min() >= 0


def test_same_seed_is_bit_identical():
    cfg = SimConfig(SystemParams(2e-3, 50, 0.2), 10**7, seed=42, replicas=2)
    a = simulate(cfg)
    b = deterministic_replay(cfg, reference=a)
    assert a == b
    np.testing.assert_array_equal(a.delay_ccdf.values, b.delay_ccdf.values)


def test_replay_detects_mismatch():
    cfg = SimConfig(SystemParams(2e-3, 50, 0.2), 10**7, seed=1)
    other = simulate(SimConfig(SystemParams(2e-3, 50, 0.2), 10**7, seed=2))
    with pytest.raises(AssertionError):
        deterministic_replay(cfg, reference=other)


def test_different_seeds_agree_statistically():
    params = SystemParams(2e-3, 50, 0.2)
    a = simulate(SimConfig(params, 5 * 10**7, seed=1))
    b = simulate(SimConfig(params, 5 * 10**7, seed=2))
    assert a != b
    se = math.hypot(a.mean_delay.stderr, b.mean_delay.stderr)
    assert abs(a.mean_delay.value - b.mean_delay.value) < 5 * se


def test_replicas_equal_merge_of_sub_runs():
    cfg = SimConfig(SystemParams(2e-3, 50, 0.2), 5 * 10**6, seed=9, replicas=4)
    merged = merge_stats(simulate_replica(cfg, r) for r in range(4))
    assert simulate(cfg) == merged
    assert simulate(cfg, workers=2) == merged


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        simulate(SimConfig(SystemParams(1e-9, 10, 0.1), 1000, seed=1))
    with pytest.raises(InsufficientDataError):
        merge_stats([])


def test_unstable_parameters_warn_but_run():
    params = SystemParams(0.2, 10, 0.5, allow_unstable=True)
    with pytest.warns(RuntimeWarning, match="unstable"):
        stats = simulate(SimConfig(params, 10**5, seed=1))
    assert stats.bulks_observed > 0


def test_ccdf_invariants():
    stats = simulate(SimConfig(SystemParams(5e-3, 20, 0.3, Regime.ASYNC), 10**7, seed=3))
    for ccdf in (stats.delay_ccdf, stats.peak_age_ccdf):
        assert ccdf.unit is Unit.CHANNEL_USES
        assert np.all(np.diff(ccdf.values) <= 0)
        assert ccdf.values[-1] == 0.0
        assert np.all(ccdf.stderr >= 0)
    assert stats.delay_ccdf.at(20) == 1.0
    assert stats.delay_ccdf.at(21) < 1.0


def test_thinning_keeps_means_and_divides_histogram():
    params = SystemParams(1e-2, 50, 0.1)
    full = simulate(SimConfig(params, 10**7, seed=4))
    thin = simulate(SimConfig(params, 10**7, seed=4, record_every=10))
    assert thin.mean_delay.value == full.mean_delay.value
    assert thin.bulks_observed == -(-full.bulks_observed // 10)
    assert thin.delay_ccdf.at(3) == pytest.approx(full.delay_ccdf.at(3), abs=5 * thin.delay_ccdf.stderr[2])
    with pytest.raises(ParameterError):
        SimConfig(params, 10**7, record_every=0)
