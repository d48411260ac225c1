"""Dense polynomial helpers (ascending coefficients).

Coefficient arrays are either ``float64`` or ``object`` arrays of
``mpmath.mpf``.  Every function that creates new numbers takes ``dps``:
``None`` selects float64, an integer selects mpmath with that many decimal
digits.  Callers wrap mpmath work in :func:`precision`.
"""

from __future__ import annotations

import contextlib
import math

import mpmath as mp
import numpy as np
from scipy.signal import lfilter

DOUBLE_DIGITS = 15.6


def precision(dps):
    return mp.workdps(dps) if dps is not None else contextlib.nullcontext()


def digits(dps) -> float:
    return DOUBLE_DIGITS if dps is None else float(dps)


def scalar(x, dps):
    return float(x) if dps is None else mp.mpf(x)


def coeffs(values, dps) -> np.ndarray:
    if dps is None:
        return np.asarray([float(v) for v in values], dtype=float)
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = mp.mpf(v)
    return out


def convert(p: np.ndarray, dps) -> np.ndarray:
    if dps is None:
        return np.asarray([float(v) for v in p], dtype=float)
    return coeffs(p, dps)


def zeros(length: int, dps) -> np.ndarray:
    return coeffs([0] * length, dps)


def monomial(c, j: int, dps) -> np.ndarray:
    """c * s**j."""
    p = zeros(j + 1, dps)
    p[j] = scalar(c, dps)
    return p


def binomial_power(a, b, n: int, dps) -> np.ndarray:
    """Coefficients of (a + b s)**n.

    Each coefficient is obtained from its predecessor by the factor
    ``(n - j + 1) / j * (b / a)``, so raw binomial coefficients never
    appear.  ``a`` must be nonzero.
    """
    a = scalar(a, dps)
    b = scalar(b, dps)
    ratio = b / a
    out = zeros(n + 1, dps)
    out[0] = a**n
    for j in range(1, n + 1):
        out[j] = out[j - 1] * ratio * (n - j + 1) / j
    return out


def trim(p: np.ndarray) -> np.ndarray:
    last = len(p) - 1
    while last > 0 and p[last] == 0:
        last -= 1
    return p[: last + 1]


def add(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if len(p) < len(q):
        p, q = q, p
    out = p.copy()
    out[: len(q)] = out[: len(q)] + q
    return out


def sub(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return add(p, -q)


def mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.convolve(p, q)


def scale(p: np.ndarray, c) -> np.ndarray:
    return p * c


def shift(p: np.ndarray, j: int) -> np.ndarray:
    """Multiply by s**j."""
    if j == 0:
        return p.copy()
    out = np.concatenate([np.zeros(j, dtype=p.dtype), p])
    if p.dtype == object:
        out[:j] = p[0] * 0
    return out


def scale_argument(p: np.ndarray, a) -> np.ndarray:
    """Coefficients of p(a s): c_j -> c_j a**j."""
    out = p.copy()
    power = a**0
    for j in range(len(p)):
        out[j] = p[j] * power
        power = power * a
    return out


def derivative(p: np.ndarray) -> np.ndarray:
    if len(p) == 1:
        return p[:1] * 0
    return p[1:] * np.arange(1, len(p))


def evaluate(p: np.ndarray, s):
    """Return (p(s), sum_j |c_j| |s|**j) via Horner's rule.

    The second value is the scale against which rounding error in the
    first is measured.
    """
    value = p[-1] * 0
    mag = abs(value)
    abs_s = abs(s)
    for c in p[::-1]:
        value = value * s + c
        mag = mag * abs_s + abs(c)
    return value, mag


def lost_digits(value, mag) -> float:
    """Decimal digits cancelled when a sum of magnitude ``mag`` yields ``value``."""
    if mag == 0:
        return 0.0
    if value == 0:
        return math.inf
    return float(mp.log10(mag) - mp.log10(abs(value)))


def divide_by_s_minus_one(p: np.ndarray):
    """Synthetic division p(s) = (s - 1) q(s) + r; returns (q, r)."""
    # Descending Horner with root 1: b_k = a_k + b_{k+1}.
    m = len(p) - 1
    if m == 0:
        return p[:1] * 0, p[0]
    q = p[1:].copy()
    acc = p[-1] * 0
    for k in range(m, 0, -1):
        acc = acc + p[k]
        q[k - 1] = acc
    r = acc + p[0]
    return q, r


def series_divide(f: np.ndarray, g: np.ndarray, count: int) -> np.ndarray:
    """First ``count`` power-series coefficients of f(s) / g(s).

    Linear recursion c_j = (f_j - sum_{i>=1} g_i c_{j-i}) / g_0.
    """
    if g[0] == 0:
        raise ZeroDivisionError("series division needs a nonzero constant term")
    if f.dtype != object and g.dtype != object:
        impulse = np.zeros(count)
        impulse[0] = 1.0
        return lfilter(f, g, impulse)
    g0 = g[0]
    out = np.empty(count, dtype=object)
    glen = len(g)
    for j in range(count):
        acc = f[j] if j < len(f) else g0 * 0
        for i in range(1, min(j, glen - 1) + 1):
            acc = acc - g[i] * out[j - i]
        out[j] = acc / g0
    return out


def series_divide_with_error(f: np.ndarray, g: np.ndarray, count: int, dps):
    """Like :func:`series_divide` but also returns a first-order error estimate.

    Local rounding ``delta_j ~ 10**-digits * (|f_j| + sum_i |g_i| |c_{j-i}|)``
    is propagated through the exact dynamics of the recursion, i.e. the
    series of 1/g: ``err = |1/g| * delta`` (coefficient-wise convolution).
    """
    c = series_divide(f, g, count)
    one = g[:1] * 0 + 1
    h = series_divide(one, g, count)
    if c.dtype != object:
        absg, absc, absf, absh = np.abs(g), np.abs(c), np.abs(f), np.abs(h)
    else:
        with mp.workdps(20):
            absg, absc, absf, absh = (np.asarray([abs(mp.mpf(x)) for x in v], dtype=object)
                                      for v in (g, c, f, h))
    unit = 10.0 ** (-digits(dps))
    delta = absc[:count] * 0
    if len(absg) > 1 and count > 1:
        local = np.convolve(absg[1:], absc)[: count - 1]
        delta[1 : 1 + len(local)] = local
    delta[: min(len(absf), count)] = delta[: min(len(absf), count)] + absf[:count]
    err = np.convolve(absh, delta * unit)[:count]
    if err.dtype == object:
        err = np.asarray([float(min(x, mp.mpf(1e300))) for x in err])
    return c, err
