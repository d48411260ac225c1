"""Arrival-rate and blocklength optimisation on top of the violation probabilities."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .analysis import threshold_in_units, violation_probability
from .channel import ChannelParams, error_probability
from .errors import InfeasibleTargetError, MonotonicityError, ParameterError, StabilityError
from .pgf import Regime, SystemParams, Unit
from .simulator import thread_limit

REL_TOL = 1e-4
# P_dv at lam = LAMBDA_FLOOR * lam_max stands in for the lam -> 0+ limit
LAMBDA_FLOOR = 1e-6


class Method(str, Enum):
    EXACT_INVERSION = "exact"
    SADDLEPOINT = "saddlepoint"
    NETCALC_BOUND = "netcalc"


@dataclass(frozen=True)
class ThroughputPoint:
    n: int
    epsilon: float
    lambda_star: float
    throughput: float
    method: Method

    @property
    def feasible(self) -> bool:
        return self.lambda_star > 0


@dataclass(frozen=True)
class Probe:
    lam: float
    pdv: float


@dataclass(frozen=True)
class ArrivalRateResult:
    lambda_star: float
    lambda_max: float
    pdv: float
    probes: tuple[Probe, ...]


@dataclass(frozen=True)
class SweepRow:
    n: int
    epsilon: float
    d: int
    pdv: float
    stable: bool


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]

    @property
    def argmin(self) -> SweepRow:
        stable = [r for r in self.rows if r.stable]
        return min(stable, key=lambda r: (r.pdv, r.n))

    def pdv(self) -> np.ndarray:
        return np.array([r.pdv for r in self.rows])

    def blocklengths(self) -> np.ndarray:
        return np.array([r.n for r in self.rows])


def _method(method) -> Method:
    try:
        return Method(method)
    except ValueError:
        raise ParameterError(f"unknown method {method!r}") from None


def stability_limit(n: int, epsilon: float) -> float:
    return (1.0 - epsilon) / n


def deadline_jumps(d0: int, n_min: int, n_max: int) -> list[int]:
    """Blocklengths n in (n_min, n_max] where ceil(d0 / n) differs from ceil(d0 / (n - 1))."""
    return [n for n in range(n_min + 1, n_max + 1)
            if threshold_in_units(d0, Unit.FRAMES, n) != threshold_in_units(d0, Unit.FRAMES, n - 1)]


def _check_monotone(probes: list[Probe]):
    ordered = sorted(probes, key=lambda p: p.lam)
    for a, b in zip(ordered, ordered[1:]):
        if a.pdv > b.pdv * (1.0 + 1e-6) + 1e-12:
            raise MonotonicityError(
                f"violation probability decreased from {a.pdv:.6g} at lambda={a.lam:.6g} "
                f"to {b.pdv:.6g} at lambda={b.lam:.6g}")


def retransmission_floor(n: int, epsilon: float, d0, regime=Regime.SYNC) -> float:
    """lim_{lambda -> 0+} P(D >= d0): a lone packet needing ceil(d0 / n) or more attempts."""
    attempts = math.ceil(threshold_in_units(d0, Unit.CHANNEL_USES, n) / n)
    if Regime(regime) is Regime.SYNC:
        attempts = threshold_in_units(d0, Unit.FRAMES, n)
    return epsilon ** max(attempts - 1, 0)


def max_arrival_rate_for(n: int, epsilon: float, d0, target: float, method="exact",
                         regime=Regime.SYNC, precision="auto",
                         rel_tol: float = REL_TOL) -> ArrivalRateResult:
    """Largest lambda with P(D >= d0) <= target, for a given (n, epsilon).

    Bisection on log(lambda) between LAMBDA_FLOOR * lam_max and
    lam_max (1 - rel_tol), where lam_max = (1 - eps) / n is the stability
    limit.  Every probe is kept and checked for monotonicity.
    """
    method = _method(method)
    if not (0.0 < target <= 1.0):
        raise ParameterError(f"target must lie in (0, 1], got {target}")
    floor = retransmission_floor(n, epsilon, d0, regime)
    if floor > target:
        raise InfeasibleTargetError(
            f"target {target:g} is below the retransmission floor {floor:.4g} "
            f"(n={n}, eps={epsilon:.4g})")
    lam_max = min(stability_limit(n, epsilon), 1.0)
    probes: list[Probe] = []

    def pdv(lam):
        p = violation_probability(SystemParams(lam, n, epsilon, regime), d0, "delay",
                                  method.value, precision)
        probes.append(Probe(lam, p))
        return p

    lo, hi = lam_max * LAMBDA_FLOOR, lam_max * (1.0 - rel_tol)
    p_lo = pdv(lo)
    if p_lo > target:
        raise InfeasibleTargetError(
            f"target {target:g} is exceeded already at lambda = {lo:.4g} "
            f"(P = {p_lo:.4g}, n={n}, eps={epsilon:.4g})")
    p_hi = pdv(hi)
    if p_hi <= target:
        _check_monotone(probes)
        return ArrivalRateResult(hi, lam_max, p_hi, tuple(probes))
    p_best = p_lo
    while hi - lo > rel_tol * lo:
        mid = math.sqrt(lo * hi)
        p = pdv(mid)
        if p <= target:
            lo, p_best = mid, p
        else:
            hi = mid
    _check_monotone(probes)
    return ArrivalRateResult(lo, lam_max, p_best, tuple(probes))


def max_arrival_rate(channel: ChannelParams, d0, target: float, method="exact", **kwargs) -> float:
    """lambda* for the blocklength and SNR in ``channel``."""
    eps = error_probability(channel)
    return max_arrival_rate_for(channel.n, eps, d0, target, method, **kwargs).lambda_star


def _pool_map(fn, items, workers):
    workers = thread_limit() if workers is None else max(1, int(workers))
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _sweep_point(args) -> SweepRow:
    rho, k, n, lam, d0, regime, metric, method, precision = args
    eps = error_probability(ChannelParams(rho, k, n))
    unit = Unit.FRAMES if Regime(regime) is Regime.SYNC else Unit.CHANNEL_USES
    d = threshold_in_units(d0, unit, n)
    params = SystemParams(lam, n, eps, regime, allow_unstable=True)
    if not params.is_stable:
        return SweepRow(n, eps, d, 1.0, False)
    p = violation_probability(params, d0, metric, method, precision)
    return SweepRow(n, eps, d, p, True)


def blocklength_sweep(rho: float, k: int, lam: float, d0, n_min: int, n_max: int,
                      regime=Regime.SYNC, metric: str = "delay", method="exact",
                      precision="auto", workers: int | None = None) -> SweepResult:
    """P(X >= d0) for every integer n in [n_min, n_max].

    The curve jumps wherever ceil(d0 / n) changes, so no unimodal search
    is attempted.  Unstable blocklengths are reported with pdv = 1 and
    ``stable=False``.
    """
    method = _method(method)
    if not (1 <= n_min <= n_max):
        raise ParameterError(f"invalid blocklength range [{n_min}, {n_max}]")
    ChannelParams(rho, k, n_min)
    jobs = [(rho, k, n, lam, d0, Regime(regime), metric, method.value, precision)
            for n in range(n_min, n_max + 1)]
    rows = tuple(_pool_map(_sweep_point, jobs, workers))
    if not any(r.stable for r in rows):
        raise StabilityError(f"lambda={lam:g} is unstable for every n in [{n_min}, {n_max}]")
    return SweepResult(rows)


def _throughput_point(args) -> ThroughputPoint:
    rho, k, n, d0, target, method, regime, precision = args
    eps = error_probability(ChannelParams(rho, k, n))
    try:
        lam = max_arrival_rate_for(n, eps, d0, target, method, regime, precision).lambda_star
    except InfeasibleTargetError:
        lam = 0.0
    return ThroughputPoint(n, eps, lam, k * lam, Method(method))


def throughput_vs_blocklength(rho: float, k: int, d0, target: float, n_min: int, n_max: int,
                              method="exact", regime=Regime.SYNC, precision="auto", workers: int | None = None) -> list[ThroughputPoint]:
    """Maximum throughput k * lambda* for every n in [n_min, n_max].

    Blocklengths at which the target is infeasible even as lambda -> 0
    get lambda* = 0.
    """
    method = _method(method)
    if not (1 <= n_min <= n_max):
        raise ParameterError(f"invalid blocklength range [{n_min}, {n_max}]")
    ChannelParams(rho, k, n_min)
    jobs = [(rho, k, n, d0, target, method.value, Regime(regime), precision)
            for n in range(n_min, n_max + 1)]
    return _pool_map(_throughput_point, jobs, workers)


def best_throughput(points) -> ThroughputPoint:
    points = list(points)
    best = max(points, key=lambda p: (p.throughput, -p.n))
    if best.throughput <= 0:
        raise InfeasibleTargetError("target infeasible at every blocklength")
    return best
