import math

import numpy as np
import pytest

from shortpkt.channel import (
    EPS_MIN,
    ChannelParams,
    capacity,
    db_to_linear,
    dispersion,
    error_probability,
    q_function,
)
from shortpkt.errors import ParameterError

# Independent 50-digit mpmath evaluation of the normal approximation at
# rho = 10**0.5, k = 100, n = 168, frozen before the package was written.
GOLDEN_EPS_5DB_K100_N168 = 1.2507039425565997e-9


def test_db_to_linear():
    assert db_to_linear(0) == 1.0
    assert db_to_linear(10) == pytest.approx(10.0, rel=1e-15)
    assert db_to_linear(5) == pytest.approx(3.1622776601683795, rel=1e-15)


def test_golden_error_probability():
    eps = error_probability(ChannelParams.from_db(5, 100, 168))
    assert eps == pytest.approx(GOLDEN_EPS_5DB_K100_N168, rel=1e-10)


def test_q_function_matches_known_values():
    assert q_function(0.0) == 0.5
    assert q_function(1.959963984540054) == pytest.approx(0.025, rel=1e-12)
    # deep tail keeps relative accuracy
    assert q_function(10.0) == pytest.approx(7.61985302416047e-24, rel=1e-10)


def test_capacity_and_dispersion():
    assert capacity(1.0) == pytest.approx(0.5)
    assert dispersion(1.0) == pytest.approx(3 / 8 * math.log2(math.e) ** 2)


def test_low_rate_is_nearly_error_free():
    assert error_probability(ChannelParams(1.0, 1, 10**6)) < 1e-10


def test_clamped_to_open_interval():
    assert error_probability(ChannelParams(1e-6, 1000, 10)) < 1.0
    assert error_probability(ChannelParams(1e6, 1, 10**6)) == EPS_MIN


def test_monotone_in_snr_blocklength_and_payload():
    snrs = np.linspace(1, 8, 15)
    eps = [error_probability(ChannelParams.from_db(s, 100, 120)) for s in snrs]
    assert all(a > b for a, b in zip(eps, eps[1:]))
    eps_n = [error_probability(ChannelParams.from_db(5, 100, n)) for n in range(90, 200, 5)]
    assert all(a > b for a, b in zip(eps_n, eps_n[1:]))
    eps_k = [error_probability(ChannelParams.from_db(5, k, 150)) for k in range(60, 140, 5)]
    assert all(a < b for a, b in zip(eps_k, eps_k[1:]))


def test_error_probability_in_unit_interval_on_grid():
    for snr in (-5, 0, 5, 10, 20):
        for k in (1, 50, 100, 500):
            for n in (1, 10, 100, 1000):
                assert 0.0 < error_probability(ChannelParams.from_db(snr, k, n)) < 1.0


@pytest.mark.parametrize("rho,k,n", [(0, 1, 1), (-1, 1, 1), (math.inf, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1.5, 2)])
def test_invalid_channel_parameters(rho, k, n):
    with pytest.raises(ParameterError):
        ChannelParams(rho, k, n)
