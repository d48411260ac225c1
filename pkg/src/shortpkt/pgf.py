"""Closed-form generating functions of delay and peak age.

A :class:`RationalPgf` is a ratio of two dense polynomials in ``s``.  The
constructors here expand the closed forms for both the frame-synchronous
model (time in frames of ``n`` channel uses, bulk arrivals) and the
frame-asynchronous model (time in channel uses, packet-by-packet service).

Expanding ``(1 - eps s)**n`` in the monomial basis produces coefficients
as large as ``(1 + eps)**n`` whose alternating sum is ``(1 - eps)**n``,
so double precision collapses once ``n * eps`` is more than a few units.
Those cases are built with mpmath at a digit count chosen from that
growth estimate (``precision="auto"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property

import mpmath as mp
import numpy as np

from . import _poly
from .errors import (
    EvaluationError,
    NumericalInstabilityError,
    ParameterError,
    StabilityError,
)


class Regime(str, Enum):
    SYNC = "sync"
    ASYNC = "async"


class Unit(str, Enum):
    FRAMES = "frames"
    CHANNEL_USES = "channel_uses"
    COUNT = "count"


@dataclass(frozen=True)
class SystemParams:
    """Arrival probability per channel use, blocklength, packet error probability.

    Unstable tuples (``lam * n >= 1 - epsilon``) are rejected unless
    ``allow_unstable`` is set; only the simulator accepts them.
    """

    lam: float
    n: int
    epsilon: float
    regime: Regime = Regime.SYNC
    allow_unstable: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ParameterError(f"arrival probability lambda must lie in (0, 1), got {self.lam}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"blocklength n must be an integer >= 1, got {self.n}")
        if not (0.0 <= self.epsilon < 1.0):
            raise ParameterError(f"error probability epsilon must lie in [0, 1), got {self.epsilon}")
        object.__setattr__(self, "n", int(self.n))
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError:
            raise ParameterError(f"unknown regime {self.regime!r}") from None
        if not self.allow_unstable:
            self.require_stable()

    @property
    def load(self) -> float:
        """Mean number of frames of work per frame, lambda n / (1 - epsilon)."""
        return self.lam * self.n / (1.0 - self.epsilon)

    @property
    def is_stable(self) -> bool:
        return self.lam * self.n < 1.0 - self.epsilon

    def require_stable(self):
        if not self.is_stable:
            raise StabilityError(
                f"unstable parameters: lambda*n = {self.lam * self.n:.6g} "
                f">= 1 - epsilon = {1.0 - self.epsilon:.6g}"
            )

    def require_regime(self, regime: Regime):
        if self.regime is not regime:
            raise ParameterError(f"operation requires regime {regime.value!r}, got {self.regime.value!r}")

    def with_lambda(self, lam: float) -> SystemParams:
        return replace(self, lam=lam)


@dataclass(frozen=True, eq=False)
class RationalPgf:
    """G(s) = numerator(s) / denominator(s), ascending coefficients.

    ``dps`` is ``None`` for float64 coefficients, otherwise the mpmath
    working precision (decimal digits) the coefficients were built with.
    """

    numerator: np.ndarray
    denominator: np.ndarray
    unit: Unit = Unit.COUNT
    dps: int | None = None
    # Recipe for rebuilding at another digit count; set by the closed-form
    # constructors, absent for results of rational algebra.
    rebuild: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.numerator) == 0 or len(self.denominator) == 0:
            raise ParameterError("empty coefficient vector")
        if self.denominator[0] == 0:
            raise ParameterError("denominator constant term must be nonzero")

    def __call__(self, s: float) -> float:
        return eval_at(self, s)

    @property
    def degree(self) -> tuple[int, int]:
        return len(self.numerator) - 1, len(self.denominator) - 1

    def context(self):
        return _poly.precision(self.dps)

    @property
    def can_rebuild(self) -> bool:
        return self.rebuild is not None

    def at_precision(self, dps: int) -> RationalPgf:
        """The same generating function rebuilt with ``dps`` digits."""
        if self.rebuild is None:
            raise NumericalInstabilityError("generating function has no rebuild recipe")
        return self.rebuild(min(_MAX_DPS, int(dps)))

    @cached_property
    def reduced(self) -> RationalPgf:
        """Same function with common factors (s - 1) cancelled."""
        num, den = self.numerator, self.denominator
        with self.context():
            for _ in range(4):
                if len(num) < 2 or len(den) < 2:
                    break
                if not (_is_zero(*_poly.evaluate(num, _one(self.dps)), self.dps)
                        and _is_zero(*_poly.evaluate(den, _one(self.dps)), self.dps)):
                    break
                num, _ = _poly.divide_by_s_minus_one(num)
                den, _ = _poly.divide_by_s_minus_one(den)
        if num is self.numerator:
            return self
        return RationalPgf(num, den, self.unit, self.dps)


def _one(dps):
    return _poly.scalar(1, dps)


def _zero_tolerance(dps) -> float:
    return 10.0 ** (-(_poly.digits(dps) - 3.6))


def _min_significant(dps) -> float:
    return 10.0 if dps is None else 12.0


def _is_zero(value, mag, dps) -> bool:
    return abs(value) <= mag * _zero_tolerance(dps)


# -- precision selection -------------------------------------------------------

_MIN_EXTENDED_DPS = 30
_MAX_DPS = 2000


def _growth_digits(params: SystemParams) -> float:
    """Decimal digits cancelled when the frame-sync polynomials are summed near s = 1."""
    n, eps, lam = params.n, params.epsilon, params.lam
    mass = max(1.0 + eps, 1.0 - lam + abs(lam - eps))
    return n * (math.log10(mass) - math.log10(1.0 - eps))


def resolve_dps(params: SystemParams, precision="auto", factor: int = 1):
    """Map a precision request to ``None`` (float64) or an mpmath digit count.

    ``factor`` scales the growth estimate for products of several
    ill-conditioned factors (peak-age generating functions).
    """
    if isinstance(precision, (int, np.integer)) and not isinstance(precision, bool):
        if precision < 16:
            raise ParameterError("explicit precision must be at least 16 digits")
        return int(precision)
    if precision == "double":
        return None
    if precision not in ("auto", "extended"):
        raise ParameterError(f"unknown precision mode {precision!r}")
    growth = factor * _growth_digits(params) if params.regime is Regime.SYNC else 0.0
    if precision == "auto" and growth < 1.0:
        return None
    guard = math.log10(params.n + 1.0) + max(0.0, -math.log10(params.lam * params.n))
    return int(min(_MAX_DPS, _MIN_EXTENDED_DPS + math.ceil(growth + guard)))


def _build(builder, params: SystemParams, precision, factor: int = 1) -> RationalPgf:
    """Construct and verify normalisation; in auto mode retry with more digits."""
    dps = resolve_dps(params, precision, factor)
    attempts = 4 if precision == "auto" else 1
    last_error = None
    for _ in range(attempts):
        with _poly.precision(dps):
            pgf = builder(params, dps)
        try:
            err = normalization_error(pgf)
        except (NumericalInstabilityError, EvaluationError) as exc:
            err, last_error = math.inf, exc
        if err <= 1e-9:
            return replace(pgf, rebuild=lambda d: _build(builder, params, d, factor))
        dps = _MIN_EXTENDED_DPS if dps is None else min(_MAX_DPS, 2 * dps)
    raise NumericalInstabilityError(
        f"generating function fails normalisation (|G(1) - 1| = {err:.3g}) at "
        f"{'double' if dps is None else dps} precision; use precision='extended' "
        "or a larger digit count"
    ) from last_error


# -- evaluation ---------------------------------------------------------------

def _evaluate(pgf: RationalPgf, s, max_order: int = 3):
    """num(s)/den(s) in working precision, resolving 0/0 by L'Hopital."""
    num, den = pgf.numerator, pgf.denominator
    for order in range(max_order + 1):
        nv, nm = _poly.evaluate(num, s)
        dv, dm = _poly.evaluate(den, s)
        num_zero, den_zero = _is_zero(nv, nm, pgf.dps), _is_zero(dv, dm, pgf.dps)
        if not den_zero:
            lost = max(_poly.lost_digits(nv, nm) if not num_zero else 0.0,
                       _poly.lost_digits(dv, dm))
            if lost > _poly.digits(pgf.dps) - _min_significant(pgf.dps):
                raise NumericalInstabilityError(
                    f"evaluation at s={float(s):.6g} loses {lost:.1f} digits; "
                    "rebuild in extended precision"
                )
            return nv / dv
        if not num_zero:
            raise EvaluationError(f"pole at s={float(s):.12g}")
        if order == max_order:
            break
        num, den = _poly.derivative(num), _poly.derivative(den)
    raise EvaluationError(f"unresolved 0/0 at s={float(s):.12g} after {max_order} derivatives")


def eval_at(pgf: RationalPgf, s: float) -> float:
    """G(s) for s in [0, 1], with removable singularities resolved."""
    if not (0.0 <= s <= 1.0):
        raise ParameterError(f"eval_at expects s in [0, 1], got {s}")
    with pgf.context():
        return float(_evaluate(pgf.reduced, _poly.scalar(s, pgf.dps)))


def eval_extended(pgf: RationalPgf, s):
    """G(s) at working precision for any real s inside the radius of convergence."""
    with pgf.context():
        return _evaluate(pgf.reduced, _poly.scalar(s, pgf.dps))


def normalization_error(pgf: RationalPgf) -> float:
    return abs(eval_at(pgf, 1.0) - 1.0)


def mean_from_pgf(pgf: RationalPgf) -> float:
    """E[X] = G'(1) from the polynomial derivatives of the reduced form."""
    red = pgf.reduced
    with pgf.context():
        one = _one(pgf.dps)
        nv, nm = _poly.evaluate(red.numerator, one)
        dv, dm = _poly.evaluate(red.denominator, one)
        if _is_zero(dv, dm, pgf.dps):
            raise NumericalInstabilityError("mean diverges: pole at s = 1")
        n1, n1m = _poly.evaluate(_poly.derivative(red.numerator), one)
        d1, d1m = _poly.evaluate(_poly.derivative(red.denominator), one)
        lost = max(_poly.lost_digits(v, m) for v, m in ((nv, nm), (dv, dm), (n1, n1m), (d1, d1m))
                   if v != 0)
        if lost > _poly.digits(pgf.dps) - _min_significant(pgf.dps):
            raise NumericalInstabilityError("mean evaluation is ill-conditioned at this precision")
        g1 = nv / dv
        if abs(g1 - 1) > 1e-6:
            raise NumericalInstabilityError(f"G(1) = {float(g1):.9g}, not a normalised PGF")
        return float((n1 * dv - nv * d1) / (dv * dv))


# -- rational algebra -----------------------------------------------------------

def _common(a: RationalPgf, b: RationalPgf):
    dps = a.dps if b.dps is None else (b.dps if a.dps is None else max(a.dps, b.dps))
    def conv(p, src):
        return p if src == dps else _poly.convert(p, dps)

    with _poly.precision(dps):
        return dps, (conv(a.numerator, a.dps), conv(a.denominator, a.dps),
                     conv(b.numerator, b.dps), conv(b.denominator, b.dps))


def multiply(a: RationalPgf, b: RationalPgf, unit: Unit | None = None) -> RationalPgf:
    dps, (an, ad, bn, bd) = _common(a, b)
    with _poly.precision(dps):
        return RationalPgf(_poly.mul(an, bn), _poly.mul(ad, bd), unit or a.unit, dps)


def _combine(a: RationalPgf, b: RationalPgf, sign: int, unit) -> RationalPgf:
    dps, (an, ad, bn, bd) = _common(a, b)
    with _poly.precision(dps):
        if len(ad) == len(bd) and all(x == y for x, y in zip(ad, bd)):
            num = _poly.add(an, bn * sign)
            den = ad.copy()
        else:
            num = _poly.add(_poly.mul(an, bd), _poly.mul(bn, ad) * sign)
            den = _poly.mul(ad, bd)
        return RationalPgf(num, den, unit or a.unit, dps)


def add(a: RationalPgf, b: RationalPgf, unit: Unit | None = None) -> RationalPgf:
    return _combine(a, b, 1, unit)


def subtract(a: RationalPgf, b: RationalPgf, unit: Unit | None = None) -> RationalPgf:
    return _combine(a, b, -1, unit)


def scale_argument(pgf: RationalPgf, a: float) -> RationalPgf:
    """G(a s) for a in (0, 1]."""
    if not (0.0 < a <= 1.0):
        raise ParameterError(f"argument scale must lie in (0, 1], got {a}")
    with pgf.context():
        a = _poly.scalar(a, pgf.dps)
        return RationalPgf(_poly.scale_argument(pgf.numerator, a),
                           _poly.scale_argument(pgf.denominator, a), pgf.unit, pgf.dps)


def _scale_argument_exact(pgf: RationalPgf, a) -> RationalPgf:
    # ``a`` already in working precision (e.g. (1 - lam)**n computed in mpmath)
    with pgf.context():
        return RationalPgf(_poly.scale_argument(pgf.numerator, a),
                           _poly.scale_argument(pgf.denominator, a), pgf.unit, pgf.dps)


def rational(num, den, unit: Unit = Unit.COUNT, dps=None) -> RationalPgf:
    """Build from plain coefficient lists (converted to the working type)."""
    with _poly.precision(dps):
        return RationalPgf(_poly.coeffs(num, dps), _poly.coeffs(den, dps), unit, dps)


def compose(outer: RationalPgf, inner: RationalPgf, unit: Unit | None = None) -> RationalPgf:
    """outer(inner(s)) for rational inner a(s)/b(s).

    With m = max degree of outer, the result is
    sum_k N_k a^k b^(m-k) / sum_k D_k a^k b^(m-k), evaluated by a
    homogeneous Horner scheme.
    """
    dps, (on, od, a, b) = _common(outer, inner)
    with _poly.precision(dps):
        m = max(len(on), len(od)) - 1
        on = _poly.add(on, _poly.zeros(m + 1, dps))
        od = _poly.add(od, _poly.zeros(m + 1, dps))
        bpow = [_poly.coeffs([1], dps)]
        for _ in range(m):
            bpow.append(_poly.mul(bpow[-1], b))

        def horner(c):
            acc = _poly.coeffs([c[m]], dps)
            for k in range(m - 1, -1, -1):
                acc = _poly.add(_poly.mul(acc, a), bpow[m - k] * c[k])
            return acc

        return RationalPgf(horner(on), horner(od), unit or inner.unit, dps)


# -- closed forms ---------------------------------------------------------------

def _q_frame(params: SystemParams, dps):
    """(1 - lam)**n and 1 - (1 - lam)**n, accurate for small lam."""
    if dps is None:
        log_q = params.n * math.log1p(-params.lam)
        return math.exp(log_q), -math.expm1(log_q)
    log_q = params.n * mp.log1p(-mp.mpf(params.lam))
    return mp.exp(log_q), -mp.expm1(log_q)


def _sync_polys(params: SystemParams, dps):
    """(1 - eps s)**n and (1 - lam + (lam - eps) s)**n."""
    lam, eps, n = _poly.scalar(params.lam, dps), _poly.scalar(params.epsilon, dps), params.n
    a = _poly.binomial_power(1, -eps, n, dps)
    b = _poly.binomial_power(1 - lam, lam - eps, n, dps)
    return a, b


def _delay_sync(params: SystemParams, dps) -> RationalPgf:
    lam, eps, n = _poly.scalar(params.lam, dps), _poly.scalar(params.epsilon, dps), params.n
    q, one_minus_q = _q_frame(params, dps)
    a, b = _sync_polys(params, dps)
    c = 1 - lam * n / (1 - eps)
    one_minus_s = _poly.coeffs([1, -1], dps)
    num = _poly.mul(one_minus_s, _poly.sub(a * q, b)) * c
    den = _poly.sub(_poly.shift(a, 1), b) * one_minus_q
    return RationalPgf(num, den, Unit.FRAMES, dps)


def delay_pgf_sync(params: SystemParams, precision="auto") -> RationalPgf:
    """PGF of the steady-state bulk delay in frames (frame-synchronous model).

    G(s) = (1 - lam n/(1-eps)) (1-s) [(1-lam)^n (1-eps s)^n - (1-lam+(lam-eps)s)^n]
           / ((1 - (1-lam)^n) [s (1-eps s)^n - (1-lam+(lam-eps)s)^n])
    """
    params.require_regime(Regime.SYNC)
    params.require_stable()
    return _build(_delay_sync, params, precision)


def _delay_async(params: SystemParams, dps) -> RationalPgf:
    lam, eps, n = _poly.scalar(params.lam, dps), _poly.scalar(params.epsilon, dps), params.n
    c = 1 - eps - lam * n
    num = _poly.zeros(n + 2, dps)
    num[n] = -c
    num[n + 1] = c
    den = _poly.zeros(n + 2, dps)
    den[0] = den[0] - (1 - lam)
    den[1] = den[1] + 1
    den[n] = den[n] + (eps - lam)
    den[n + 1] = den[n + 1] - eps
    return RationalPgf(num, den, Unit.CHANNEL_USES, dps)


def delay_pgf_async(params: SystemParams, precision="auto") -> RationalPgf:
    """PGF of the steady-state packet delay in channel uses (frame-asynchronous model).

    G(s) = (s - 1)(1 - eps - lam n) s^n / (s - (1 - lam) - (lam + eps (s - 1)) s^n)
    """
    params.require_regime(Regime.ASYNC)
    params.require_stable()
    return _build(_delay_async, params, precision)


def _max_with_gap(delay: RationalPgf, q) -> RationalPgf:
    """PGF of max(D, T) for T ~ Geometric on {1, 2, ...} with P(T > k) = q**k.

    G_D(s) - (1 - s) G_D(q s) / (1 - q s).
    """
    dps = delay.dps
    delay = delay.reduced
    with _poly.precision(dps):
        one_minus_s = _poly.coeffs([1, -1], dps)
        one_minus_qs = _poly.coeffs([1, 0], dps)
        one_minus_qs[1] = -q
    damped = multiply(_scale_argument_exact(delay, q),
                      RationalPgf(one_minus_s, one_minus_qs, delay.unit, dps))
    return subtract(delay, damped)


def _peak_sync(params: SystemParams, dps) -> RationalPgf:
    q, one_minus_q = _q_frame(params, dps)
    a, b = _sync_polys(params, dps)
    bulk_service = RationalPgf(_poly.sub(b, a * q), a * one_minus_q, Unit.FRAMES, dps)
    return multiply(bulk_service, _max_with_gap(_delay_sync(params, dps), q), Unit.FRAMES)


def peak_age_pgf_sync(params: SystemParams, precision="auto") -> RationalPgf:
    """PGF of the steady-state peak age in frames (frame-synchronous model).

    Bulk-service PGF times the PGF of max(D, inter-bulk gap), where the
    gap between bulk arrivals is geometric with P(gap > k) = (1-lam)^(n k).
    """
    params.require_regime(Regime.SYNC)
    params.require_stable()
    return _build(_peak_sync, params, precision, factor=3)


def _peak_async(params: SystemParams, dps) -> RationalPgf:
    eps, n = _poly.scalar(params.epsilon, dps), params.n
    service = RationalPgf(_poly.monomial(1 - eps, n, dps),
                          _poly.sub(_poly.coeffs([1], dps), _poly.monomial(eps, n, dps)),
                          Unit.CHANNEL_USES, dps)
    q = 1 - _poly.scalar(params.lam, dps)
    return multiply(service, _max_with_gap(_delay_async(params, dps), q), Unit.CHANNEL_USES)


def peak_age_pgf_async(params: SystemParams, precision="auto") -> RationalPgf:
    """PGF of the steady-state peak age in channel uses (frame-asynchronous model).

    (1-eps) s^n / (1 - eps s^n) * [G_D(s) - (1-s) G_D((1-lam) s) / (1 - (1-lam) s)].
    """
    params.require_regime(Regime.ASYNC)
    params.require_stable()
    return _build(_peak_async, params, precision)


def delay_pgf(params: SystemParams, precision="auto") -> RationalPgf:
    if params.regime is Regime.SYNC:
        return delay_pgf_sync(params, precision)
    return delay_pgf_async(params, precision)


def peak_age_pgf(params: SystemParams, precision="auto") -> RationalPgf:
    if params.regime is Regime.SYNC:
        return peak_age_pgf_sync(params, precision)
    return peak_age_pgf_async(params, precision)


# -- embedded-chain building blocks (frame-synchronous) -------------------------

def indicator_pgf(params: SystemParams, dps=None) -> RationalPgf:
    """PGF of 1{A > 0}: whether a frame carries at least one arrival."""
    with _poly.precision(dps):
        q, one_minus_q = _q_frame(params, dps)
        return rational([q, one_minus_q], [1], Unit.COUNT, dps)


def indicator_inverse(params: SystemParams, dps=None) -> RationalPgf:
    """Affine inverse of :func:`indicator_pgf`: s -> (s - q) / (1 - q)."""
    with _poly.precision(dps):
        q, one_minus_q = _q_frame(params, dps)
        return rational([-q / one_minus_q, 1 / one_minus_q], [1], Unit.COUNT, dps)


def packet_service_pgf(epsilon: float, dps=None) -> RationalPgf:
    """Geometric(1 - eps) number of frames to deliver one packet."""
    with _poly.precision(dps):
        eps = _poly.scalar(epsilon, dps)
        return rational([0, 1 - eps], [1, -eps], Unit.FRAMES, dps)


def bulk_size_pgf(params: SystemParams, dps=None) -> RationalPgf:
    """Binomial(n, lam) conditioned on being positive."""
    with _poly.precision(dps):
        lam = _poly.scalar(params.lam, dps)
        q, one_minus_q = _q_frame(params, dps)
        num = _poly.binomial_power(1 - lam, lam, params.n, dps)
        num[0] = _poly.scalar(0, dps)  # (1-lam)^n - q
        return RationalPgf(num / one_minus_q, _poly.coeffs([1], dps), Unit.COUNT, dps)


def bulk_service_pgf(params: SystemParams, dps=None) -> RationalPgf:
    """Frames to serve a whole bulk: bulk size composed with packet service."""
    return compose(bulk_size_pgf(params, dps), packet_service_pgf(params.epsilon, dps), Unit.FRAMES)


def bulks_during_service_pgf(params: SystemParams, dps=None) -> RationalPgf:
    """Number of bulks arriving while one bulk is in service."""
    return compose(bulk_service_pgf(params, dps), indicator_pgf(params, dps), Unit.COUNT)


def mean_bulks_during_service(params: SystemParams) -> float:
    """P(A > 0) E[service frames per packet] E[bulk size] = lam n / (1 - eps)."""
    return params.lam * params.n / (1.0 - params.epsilon)


def buffer_size_pgf(params: SystemParams, dps=None) -> RationalPgf:
    """Bulks left behind by a departing bulk (embedded Markov chain).

    G_Q(s) = (1 - E[M]) (s - 1) G_M(s) / (s - G_M(s)).
    """
    gm = bulks_during_service_pgf(params, dps)
    with _poly.precision(dps):
        mean_m = 1 - _poly.scalar(params.lam, dps) * params.n / (1 - _poly.scalar(params.epsilon, dps))
        s_minus_1 = _poly.coeffs([-1, 1], dps)
        num = _poly.mul(s_minus_1, gm.numerator) * mean_m
        den = _poly.sub(_poly.shift(gm.denominator, 1), gm.numerator)
        return RationalPgf(num, den, Unit.COUNT, dps)


def embedded_chain_delay_pgf(params: SystemParams, precision="auto") -> RationalPgf:
    """Delay PGF rebuilt from the embedded-chain building blocks.

    G_D = G_Q o (G_{1{A>0}})^-1; equals :func:`delay_pgf_sync` as a function.
    """
    params.require_regime(Regime.SYNC)
    params.require_stable()

    def build(p, dps):
        return compose(buffer_size_pgf(p, dps), indicator_inverse(p, dps), Unit.FRAMES)

    return _build(build, params, precision)


# public name used by the interface contract
appendix_chain_pgf = embedded_chain_delay_pgf
