import math

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from shortpkt import pgf as P
from shortpkt.analysis import netcalc_bound, tail_series
from shortpkt.pgf import Regime, SystemParams

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def stable_params(draw, regime=Regime.SYNC, n_max=200, eps_min=0.01):
    if not isinstance(regime, Regime):
        regime = draw(regime)
    n = draw(st.integers(5, n_max))
    eps = draw(st.floats(eps_min, 0.5))
    load = draw(st.floats(0.01, 0.8))
    return SystemParams(load * (1 - eps) / n, n, eps, regime)


@SETTINGS
@given(stable_params(n_max=60), st.floats(0.2, 0.95))
def test_chain_construction_agrees(params, s):
    chain, closed = P.embedded_chain_delay_pgf(params), P.delay_pgf_sync(params)
    assert math.isclose(P.eval_at(chain, s), P.eval_at(closed, s), rel_tol=1e-9, abs_tol=1e-12)


@SETTINGS
@given(stable_params(regime=st.sampled_from(list(Regime))))
def test_normalised(params):
    for g in (P.delay_pgf(params), P.peak_age_pgf(params)):
        assert P.normalization_error(g) < 1e-9


@SETTINGS
@given(stable_params(n_max=150))
def test_tail_is_a_ccdf(params):
    t = tail_series(P.delay_pgf(params), 25)
    values = [t.at(d) for d in range(1, 26)]
    assert math.isclose(values[0], 1.0, abs_tol=1e-12)
    assert all(-1e-12 <= v <= 1.0 + 1e-12 for v in values)
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


@SETTINGS
@given(stable_params(n_max=150, eps_min=0.02), st.integers(3, 10))
def test_bound_dominates_exact_in_moderate_regime(params, d):
    # below eps ~ 0.012 at light load the bound can undercut the exact tail
    exact = tail_series(P.delay_pgf(params), d).at(d)
    assert netcalc_bound(params, d) >= exact * (1 - 1e-6)


@SETTINGS
@given(stable_params(regime=Regime.ASYNC, n_max=80))
def test_async_delay_support(params):
    t = tail_series(P.delay_pgf(params), 3 * params.n)
    assert math.isclose(t.at(params.n), 1.0, abs_tol=1e-12)
    assert t.at(params.n + 1) < 1.0 - 1e-6
