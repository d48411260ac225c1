"""Monte-Carlo simulation of the FCFS retransmission queue.

Time advances event by event rather than channel use by channel use:
gaps between arrivals (or between frames holding at least one arrival)
are geometric, so skipping them is exact.  The FCFS departure times then
follow the Lindley recursion ``F_m = max(T_m, F_{m-1}) + S_m``, evaluated
for a whole chunk of customers at once with a running maximum.

Frame-synchronous model
    Time unit is the frame.  All packets arriving in frame ``T`` form a
    bulk, which is eligible for service from frame ``T + 1``.  Its service
    takes ``S = B + NegBin(B, 1 - eps)`` frames, B being the bulk size.
    The recorded delay is ``D = F - T`` (so at least one frame).

Frame-asynchronous model
    Time unit is the channel use.  Each packet needs ``n * Geo(1 - eps)``
    channel uses; one arriving in channel use ``a`` to an empty buffer is
    transmitted in channel uses ``a + 1, ..., a + n``.  Delay is ``F - a``.

In both models the peak age of customer ``m`` is
``F_m - T_{m-1} = max(D_{m-1}, T_m - T_{m-1}) + S_m``.

Random streams: replica ``r`` of seed ``s`` uses
``Generator(Philox(SeedSequence([s, r])))``; the seed sequence hashes both
words, so replica streams are independent and platform-stable.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import TailSeries
from .errors import InsufficientDataError, ParameterError
from .pgf import Regime, SystemParams, Unit

N_BATCHES = 32
_CHUNK = 1 << 18


@dataclass(frozen=True)
class SimConfig:
    """Horizon and warm-up are in channel uses; warm-up defaults to 10% of the horizon.

    ``record_every = K`` enters only every K-th arrival of the recording
    window (by index) into the CCDF histograms.  Consecutive delays are
    positively correlated, so a stride of a few dozen makes the binomial
    standard errors honest.  Means always use every arrival.
    """

    params: SystemParams
    horizon: int
    warmup: int | None = None
    seed: int = 0
    replicas: int = 1
    record_every: int = 1

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", int(self.horizon) // 10)
        if int(self.horizon) != self.horizon or int(self.warmup) != self.warmup:
            raise ParameterError("horizon and warmup must be integers")
        if not (self.horizon > self.warmup >= 0):
            raise ParameterError(f"need horizon > warmup >= 0, got {self.horizon}, {self.warmup}")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ParameterError(f"replicas must be an integer >= 1, got {self.replicas}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ParameterError(f"record_every must be an integer >= 1, got {self.record_every}")
        if not (0 <= int(self.seed) < 2**64):
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.params.regime is Regime.SYNC and self.horizon // self.params.n <= self.warmup // self.params.n:
            raise ParameterError("horizon leaves no complete frame after warm-up")

    @property
    def unit(self) -> Unit:
        return Unit.FRAMES if self.params.regime is Regime.SYNC else Unit.CHANNEL_USES

    def window(self) -> tuple[int, int]:
        """Recording window [start, end) in the model's time unit."""
        if self.params.regime is Regime.SYNC:
            n = self.params.n
            return self.warmup // n, self.horizon // n
        return self.warmup, self.horizon


def replica_generator(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


@dataclass(eq=False)
class ReplicaCounts:
    """Raw, mergeable tallies of one or more replicas."""

    unit: Unit
    delay_hist: np.ndarray
    peak_hist: np.ndarray
    # per batch: [count, sum, count_peak, sum_peak, occupancy area]
    batches: np.ndarray
    window_length: int
    replicas: int = 1

    def merge(self, other: ReplicaCounts) -> ReplicaCounts:
        if self.unit is not other.unit:
            raise ParameterError("cannot merge results measured in different units")
        return ReplicaCounts(
            self.unit,
            _add_hist(self.delay_hist, other.delay_hist),
            _add_hist(self.peak_hist, other.peak_hist),
            np.vstack([self.batches, other.batches]),
            self.window_length + other.window_length,
            self.replicas + other.replicas,
        )


def _add_hist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(max(len(a), len(b)), dtype=np.int64)
    out[: len(a)] += a
    out[: len(b)] += b
    return out


@dataclass(frozen=True, eq=False)
class Estimate:
    value: float
    stderr: float

    def __iter__(self):
        return iter((self.value, self.stderr))


@dataclass(frozen=True, eq=False)
class SimStats:
    delay_ccdf: TailSeries
    peak_age_ccdf: TailSeries
    mean_delay: Estimate
    mean_peak_age: Estimate
    bulks_observed: int
    mean_occupancy: Estimate
    counts: ReplicaCounts = field(repr=False)

    @property
    def unit(self) -> Unit:
        return self.counts.unit

    def __eq__(self, other):
        if not isinstance(other, SimStats):
            return NotImplemented
        a, b = self.counts, other.counts
        return (a.unit is b.unit and a.window_length == b.window_length
                and np.array_equal(a.delay_hist, b.delay_hist)
                and np.array_equal(a.peak_hist, b.peak_hist)
                and np.array_equal(a.batches, b.batches))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Per-customer trajectory of a short run (debugging and path checks).

    ``arrival`` is T_m (frame or CU index), ``size`` is B_m (1 for the
    asynchronous model), ``service`` is S_m, ``waiting`` is W_m,
    ``delay`` is D_m = W_m + S_m and ``peak_age`` is Delta_m (NaN-free;
    the first entry has no predecessor and is -1).  ``attempts`` holds
    the transmissions spent on each packet in FCFS order.
    """

    unit: Unit
    arrival: np.ndarray
    size: np.ndarray
    service: np.ndarray
    waiting: np.ndarray
    departure: np.ndarray
    delay: np.ndarray
    peak_age: np.ndarray
    attempts: np.ndarray

    def occupancy(self, start: int, end: int) -> np.ndarray:
        """Q_t: customers in system during unit t (arrived at or before t, not yet departed)."""
        q = np.zeros(end - start + 1, dtype=np.int64)
        lo = np.clip(self.arrival - start, 0, end - start)
        hi = np.clip(self.departure - start, 0, end - start)
        np.add.at(q, lo, 1)
        np.add.at(q, hi, -1)
        return np.cumsum(q)[:-1]


# -- customer generation ------------------------------------------------------------

def _bulk_sizes(rng: np.random.Generator, n: int, lam: float, size: int) -> np.ndarray:
    """Binomial(n, lam) conditioned on >= 1: first arrival slot J, then the rest."""
    u = rng.random(size)
    log_1ml = math.log1p(-lam)
    one_minus_q = -math.expm1(n * log_1ml)
    j = np.ceil(np.log1p(-u * one_minus_q) / log_1ml)
    j = np.clip(j, 1, n).astype(np.int64)
    return 1 + rng.binomial(n - j, lam)


def _customers(rng: np.random.Generator, params: SystemParams, size: int, with_attempts=False):
    """Inter-arrival gaps, sizes and service times of ``size`` customers."""
    n, lam, eps = params.n, params.lam, params.epsilon
    attempts = None
    if params.regime is Regime.SYNC:
        p_bulk = -math.expm1(n * math.log1p(-lam))
        gaps = rng.geometric(p_bulk, size).astype(np.int64)
        sizes = _bulk_sizes(rng, n, lam, size)
        if with_attempts:
            attempts = rng.geometric(1.0 - eps, int(sizes.sum())).astype(np.int64)
            bounds = np.concatenate([[0], np.cumsum(sizes)])
            service = np.add.reduceat(attempts, bounds[:-1]) if size else np.zeros(0, np.int64)
        else:
            service = sizes + rng.negative_binomial(sizes, 1.0 - eps)
    else:
        gaps = rng.geometric(lam, size).astype(np.int64)
        sizes = np.ones(size, dtype=np.int64)
        attempts = rng.geometric(1.0 - eps, size).astype(np.int64)
        service = n * attempts
    return gaps, sizes, service.astype(np.int64), attempts


def _lindley(arrival: np.ndarray, service: np.ndarray, f_prev: int) -> np.ndarray:
    """F_m = max(T_m, F_{m-1}) + S_m for a chunk, given the previous departure."""
    csum = np.cumsum(service)
    before = csum - service
    start_gap = np.maximum.accumulate(np.maximum(arrival - before, f_prev))
    return csum + start_gap


# -- single replica --------------------------------------------------------------------

def _warn_unstable(params: SystemParams):
    if not params.is_stable:
        warnings.warn(
            f"simulating an unstable queue (lambda*n = {params.lam * params.n:.4g} >= "
            f"1 - eps = {1 - params.epsilon:.4g}); results describe a transient",
            RuntimeWarning, stacklevel=3)


def simulate_replica(config: SimConfig, replica: int) -> ReplicaCounts:
    """Tallies of replica ``replica`` (sub-seed derived from ``config.seed``)."""
    params = config.params
    rng = replica_generator(config.seed, replica)
    start, end = config.window()
    length = end - start
    delay_hist = np.zeros(0, dtype=np.int64)
    peak_hist = np.zeros(0, dtype=np.int64)
    batches = np.zeros((N_BATCHES, 5))
    # frame-sync frames are numbered from 0, so the first bulk lands in frame gaps[0] - 1
    t_last = -1 if params.regime is Regime.SYNC else 0
    f_last = t_last
    prev_recorded = False
    seen = 0
    stride = int(config.record_every)
    expected = max(1.0, _customers_per_unit(params) * end)
    chunk = int(min(_CHUNK, max(1024, 1.2 * expected)))
    while True:
        gaps, _, service, _ = _customers(rng, params, chunk)
        arrival = t_last + np.cumsum(gaps)
        keep = arrival < end
        done = not keep.all()
        arrival, service = arrival[keep], service[keep]
        if len(arrival) == 0:
            break
        depart = _lindley(arrival, service, f_last)
        pred = np.concatenate([[t_last], arrival[:-1]])
        rec = arrival >= start
        if rec.any():
            d = depart[rec] - arrival[rec]
            peak = (depart - pred)[rec]
            has_pred = np.ones(len(d), dtype=bool)
            if not prev_recorded:
                has_pred[0] = False
            sampled = (seen + np.arange(len(d))) % stride == 0
            seen += len(d)
            delay_hist = _add_hist(delay_hist, np.bincount(d[sampled]))
            peak_hist = _add_hist(peak_hist, np.bincount(peak[has_pred & sampled]))
            b = np.minimum((arrival[rec] - start) * N_BATCHES // length, N_BATCHES - 1)
            batches[:, 0] += np.bincount(b, minlength=N_BATCHES)
            batches[:, 1] += np.bincount(b, weights=d, minlength=N_BATCHES)
            batches[:, 2] += np.bincount(b[has_pred], minlength=N_BATCHES)
            batches[:, 3] += np.bincount(b[has_pred], weights=peak[has_pred], minlength=N_BATCHES)
            # time in system falling inside the window, attributed to the arrival batch
            inside = np.minimum(depart[rec], end) - arrival[rec]
            batches[:, 4] += np.bincount(b, weights=inside, minlength=N_BATCHES)
            prev_recorded = True
        t_last, f_last = int(arrival[-1]), int(depart[-1])
        if done:
            break
    return ReplicaCounts(config.unit, delay_hist, peak_hist, batches, length)


def _customers_per_unit(params: SystemParams) -> float:
    if params.regime is Regime.SYNC:
        return -math.expm1(params.n * math.log1p(-params.lam))
    return params.lam


# -- aggregation ---------------------------------------------------------------------

def _empirical_ccdf(hist: np.ndarray, unit: Unit) -> TailSeries:
    total = int(hist.sum())
    # P(X >= d) for d = 1..max+1, so the last tabulated value is 0
    ge = np.cumsum(hist[::-1])[::-1]
    values = np.zeros(len(hist))
    values[:-1] = ge[1:] / total
    stderr = np.sqrt(values * (1.0 - values) / total)
    return TailSeries(values, unit, stderr)


def _batch_estimate(counts: np.ndarray, sums: np.ndarray) -> Estimate:
    total = counts.sum()
    value = sums.sum() / total
    ok = counts > 0
    if ok.sum() < 2:
        return Estimate(float(value), math.nan)
    means = sums[ok] / counts[ok]
    return Estimate(float(value), float(np.std(means, ddof=1) / math.sqrt(ok.sum())))


def stats_from_counts(counts: ReplicaCounts) -> SimStats:
    observed = int(counts.delay_hist.sum())
    if observed == 0:
        raise InsufficientDataError("no customers recorded after warm-up; increase the horizon")
    if counts.peak_hist.sum() == 0:
        raise InsufficientDataError("fewer than two customers recorded; peak age undefined")
    b = counts.batches
    batch_len = counts.window_length / len(b)
    occupancy = _batch_estimate(np.full(len(b), batch_len), b[:, 4])
    return SimStats(
        delay_ccdf=_empirical_ccdf(counts.delay_hist, counts.unit),
        peak_age_ccdf=_empirical_ccdf(counts.peak_hist, counts.unit),
        mean_delay=_batch_estimate(b[:, 0], b[:, 1]),
        mean_peak_age=_batch_estimate(b[:, 2], b[:, 3]),
        bulks_observed=observed,
        mean_occupancy=occupancy,
        counts=counts,
    )


def merge_stats(parts) -> SimStats:
    """Pure, order-preserving merge of replica tallies into statistics."""
    parts = list(parts)
    if not parts:
        raise InsufficientDataError("nothing to merge")
    total = parts[0]
    for p in parts[1:]:
        total = total.merge(p)
    return stats_from_counts(total)


def thread_limit() -> int:
    """Worker cap from ``SHORTPKT_THREADS`` (default 1)."""
    raw = os.environ.get("SHORTPKT_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ParameterError(f"SHORTPKT_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def _run_replica(args):
    return simulate_replica(*args)


def simulate(config: SimConfig, workers: int | None = None) -> SimStats:
    """Run all replicas (concurrently if ``workers`` > 1) and merge in replica order."""
    _warn_unstable(config.params)
    workers = thread_limit() if workers is None else max(1, int(workers))
    jobs = [(config, r) for r in range(config.replicas)]
    if workers > 1 and config.replicas > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.replicas)) as pool:
            parts = list(pool.map(_run_replica, jobs))
    else:
        parts = [_run_replica(j) for j in jobs]
    return merge_stats(parts)


def deterministic_replay(config: SimConfig, reference: SimStats | None = None) -> SimStats:
    """Re-run ``config`` sequentially; if ``reference`` is given, require bit-identical tallies."""
    stats = simulate(config, workers=1)
    if reference is not None and stats != reference:
        raise AssertionError("replay differs from the reference run")
    return stats


def simulate_path(params: SystemParams, customers: int, seed: int = 0) -> SamplePath:
    """Trajectory of the first ``customers`` customers from an empty system at time 0."""
    if customers < 1:
        raise ParameterError("customers must be >= 1")
    rng = replica_generator(seed, 0)
    gaps, sizes, service, attempts = _customers(rng, params, customers, with_attempts=True)
    arrival = np.cumsum(gaps)
    if params.regime is Regime.SYNC:
        arrival -= 1
    depart = _lindley(arrival, service, 0)
    delay = depart - arrival
    peak = np.concatenate([[-1], depart[1:] - arrival[:-1]])
    unit = Unit.FRAMES if params.regime is Regime.SYNC else Unit.CHANNEL_USES
    return SamplePath(unit, arrival, sizes, service, delay - service, depart, delay, peak, attempts)
