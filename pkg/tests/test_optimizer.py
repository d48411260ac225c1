import math

import numpy as np
import pytest

from shortpkt.analysis import violation_probability
from shortpkt.channel import ChannelParams, db_to_linear, error_probability
from shortpkt.errors import InfeasibleTargetError, MonotonicityError, ParameterError, StabilityError
from shortpkt.optimizer import (
    Method,
    Probe,
    ThroughputPoint,
    _check_monotone,
    best_throughput,
    blocklength_sweep,
    deadline_jumps,
    max_arrival_rate,
    max_arrival_rate_for,
    retransmission_floor,
    stability_limit,
    throughput_vs_blocklength,
)
from shortpkt.pgf import Regime, SystemParams

RHO_5DB = db_to_linear(5)


def test_target_one_reaches_stability_boundary():
    ch = ChannelParams(RHO_5DB, 100, 150)
    eps = error_probability(ch)
    lam = max_arrival_rate(ch, 500, 1.0)
    limit = stability_limit(150, eps)
    assert lam < limit
    assert lam == pytest.approx(limit, rel=2e-4)


def test_target_below_floor_is_infeasible():
    ch = ChannelParams(RHO_5DB, 100, 100)
    eps = error_probability(ch)
    floor = retransmission_floor(100, eps, 500)
    assert floor == pytest.approx(eps**4)
    with pytest.raises(InfeasibleTargetError):
        max_arrival_rate(ch, 500, floor / 2)


def test_bisection_against_dense_grid():
    ch = ChannelParams(RHO_5DB, 100, 150)
    eps = error_probability(ch)
    result = max_arrival_rate_for(150, eps, 500, 1e-3)
    grid = np.linspace(0, stability_limit(150, eps), 202)[1:-1]
    feasible = [lam for lam in grid if violation_probability(SystemParams(lam, 150, eps), 500) <= 1e-3]
    oracle = max(feasible)
    cell = grid[1] - grid[0]
    assert oracle <= result.lambda_star < oracle + cell
    assert result.pdv <= 1e-3
    assert result.lambda_star * 150 < 1 - eps


def test_probes_are_monotone_and_recorded():
    result = max_arrival_rate_for(100, 0.1, 500, 1e-3)
    lams = [p.lam for p in result.probes]
    assert len(lams) > 5
    ordered = sorted(result.probes, key=lambda p: p.lam)
    assert all(a.pdv <= b.pdv + 1e-15 for a, b in zip(ordered, ordered[1:]))


def test_monotonicity_violation_is_reported():
    with pytest.raises(MonotonicityError):
        _check_monotone([Probe(1e-3, 0.1), Probe(2e-3, 0.05)])


def test_lambda_star_monotone_in_target():
    prev = 0.0
    for target in (1e-5, 1e-4, 1e-3, 1e-2):
        lam = max_arrival_rate_for(120, 0.05, 500, target).lambda_star
        assert lam >= prev
        prev = lam


def test_bad_target_and_method():
    with pytest.raises(ParameterError):
        max_arrival_rate_for(100, 0.1, 500, 0.0)
    with pytest.raises(ParameterError):
        max_arrival_rate_for(100, 0.1, 500, 1e-3, method="guess")


def test_async_arrival_rate():
    lam = max_arrival_rate_for(50, 0.1, 300, 1e-3, regime=Regime.ASYNC).lambda_star
    p = violation_probability(SystemParams(lam, 50, 0.1, Regime.ASYNC), 300)
    assert p <= 1e-3


def test_deadline_jumps():
    assert deadline_jumps(500, 90, 260) == [100, 125, 167, 250]


def test_blocklength_sweep_structure():
    result = blocklength_sweep(RHO_5DB, 100, 1e-3, 500, 30, 400)
    assert len(result.rows) == 371
    best = result.argmin
    assert 30 < best.n < 400
    by_n = {r.n: r for r in result.rows}
    assert by_n[100].pdv == pytest.approx(1.2077758673558385e-2, rel=1e-6)
    assert not by_n[30].stable and by_n[30].pdv == 1.0
    assert all(r.d == math.ceil(500 / r.n) for r in result.rows)


def test_sweep_beyond_deadline_is_certain_violation():
    result = blocklength_sweep(RHO_5DB, 100, 1e-4, 500, 501, 520)
    assert all(r.pdv == 1.0 for r in result.rows)


def test_sweep_all_unstable():
    with pytest.raises(StabilityError):
        blocklength_sweep(RHO_5DB, 100, 0.05, 500, 30, 40)
    with pytest.raises(ParameterError):
        blocklength_sweep(RHO_5DB, 100, 1e-3, 500, 50, 40)


def test_sweep_parallel_matches_sequential():
    a = blocklength_sweep(RHO_5DB, 100, 1e-3, 500, 95, 110, workers=1)
    b = blocklength_sweep(RHO_5DB, 100, 1e-3, 500, 95, 110, workers=2)
    assert a == b


def test_throughput_points():
    points = throughput_vs_blocklength(db_to_linear(10), 100, 500, 1e-3, 60, 75)
    assert all(isinstance(p, ThroughputPoint) for p in points)
    for p in points:
        assert p.throughput == pytest.approx(100 * p.lambda_star)
        assert 0 <= p.lambda_star < (1 - p.epsilon) / p.n
        assert p.method is Method.EXACT_INVERSION
    assert best_throughput(points).n == 67


def test_netcalc_throughput_is_conservative_where_bound_holds():
    rho = db_to_linear(10)
    exact = throughput_vs_blocklength(rho, 100, 500, 1e-3, 60, 249)
    bound = throughput_vs_blocklength(rho, 100, 500, 1e-3, 60, 249, method="netcalc")
    for e, b in zip(exact, bound):
        assert b.throughput <= e.throughput * (1 + 1e-9)


def test_netcalc_throughput_exceeds_exact_at_two_frame_deadline():
    # d = 2 with eps ~ 0: the bound undercuts the exact tail (see analysis tests)
    rho = db_to_linear(10)
    e = throughput_vs_blocklength(rho, 100, 500, 1e-3, 250, 250)[0]
    b = throughput_vs_blocklength(rho, 100, 500, 1e-3, 250, 250, method="netcalc")[0]
    assert b.throughput > e.throughput


def test_infeasible_blocklength_gets_zero_throughput():
    points = throughput_vs_blocklength(db_to_linear(10), 100, 500, 1e-3, 40, 41)
    assert all(p.lambda_star == 0 and not p.feasible for p in points)
    with pytest.raises(InfeasibleTargetError):
        best_throughput(points)


def test_throughput_is_reproducible():
    a = throughput_vs_blocklength(db_to_linear(10), 100, 500, 1e-3, 66, 69)
    b = throughput_vs_blocklength(db_to_linear(10), 100, 500, 1e-3, 66, 69)
    assert a == b
