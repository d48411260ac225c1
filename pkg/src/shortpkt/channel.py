"""Packet error probability of a short codeword over the real AWGN channel.

Uses the normal approximation with the ``0.5 log2(n)`` third-order term:

    eps = Q((n C - k + 0.5 log2 n) / sqrt(n V))

with capacity ``C = 0.5 log2(1 + rho)`` and dispersion
``V = rho (rho + 2) / (2 (rho + 1)^2) * log2(e)^2``, both per channel use.
The noise variance is one, so ``rho`` is also the SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import erfc

from .errors import ParameterError

EPS_MIN = 1e-300

_LOG2E = math.log2(math.e)


def db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def q_function(x: float) -> float:
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    return 0.5 * float(erfc(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class ChannelParams:
    rho: float
    k: int
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise ParameterError(f"SNR rho must be positive and finite, got {self.rho}")
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"payload k must be an integer >= 1, got {self.k}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"blocklength n must be an integer >= 1, got {self.n}")

    @classmethod
    def from_db(cls, snr_db: float, k: int, n: int) -> ChannelParams:
        return cls(db_to_linear(snr_db), k, n)

    def with_blocklength(self, n: int) -> ChannelParams:
        return ChannelParams(self.rho, self.k, n)


def capacity(rho: float) -> float:
    """Capacity in bits per channel use."""
    return 0.5 * math.log2(1.0 + rho)


def dispersion(rho: float) -> float:
    """Channel dispersion in bits^2 per channel use."""
    return rho * (rho + 2.0) / (2.0 * (rho + 1.0) ** 2) * _LOG2E**2


def error_probability(params: ChannelParams) -> float:
    """Packet error probability for ``k`` bits in ``n`` channel uses.

    The result is clamped to ``[EPS_MIN, 1 - EPS_MIN]`` (the upper clamp
    is 1 - 2**-53 in practice), so it is always a valid open-interval
    probability.
    """
    if not isinstance(params, ChannelParams):
        raise ParameterError("error_probability expects a ChannelParams instance")
    n, k, rho = params.n, params.k, params.rho
    arg = (n * capacity(rho) - k + 0.5 * math.log2(n)) / math.sqrt(n * dispersion(rho))
    eps = q_function(arg)
    return min(max(eps, EPS_MIN), math.nextafter(1.0, 0.0))
