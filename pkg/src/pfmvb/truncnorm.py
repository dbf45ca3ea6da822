"""Univariate truncated normal primitives.

A truncated normal here is ``N(mu, sigma^2)`` restricted to ``sign * z > 0``,
with ``sign = 2y - 1`` in {-1, +1}.  All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

SQRT2 = np.sqrt(2.0)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT_2PI_LD = np.longdouble(1) / np.sqrt(np.longdouble(2) * np.longdouble(np.pi))


def mills_ratio(t):
    """``phi(t) / Phi(t)`` evaluated without underflow.

    For ``t < 0`` the ratio is ``sqrt(2/pi) / erfcx(-t / sqrt 2)``.  For
    ``t >= 0`` the denominator lies in [1/2, 1] and the numerator is taken in
    extended precision, so the result stays strictly positive past the float64
    underflow point near t = 38.5.  Returns ``np.longdouble``.
    """
    t = np.asarray(t, dtype=np.float64)
    out = np.empty(t.shape, dtype=np.longdouble)
    neg = t < 0
    if np.any(neg):
        out[neg] = SQRT_2_OVER_PI / special.erfcx(-t[neg] / SQRT2)
    pos = ~neg
    if np.any(pos):
        tp = t[pos].astype(np.longdouble)
        out[pos] = np.exp(-0.5 * tp * tp) * _INV_SQRT_2PI_LD / special.ndtr(t[pos])
    return out[()] if out.ndim == 0 else out


def _left_tail_fraction(u, terms=40):
    """Laplace's continued fraction for the Mills ratio at ``t = -u``, ``u >= 5``.

    Returns ``g = t + phi(t)/Phi(t)`` and the next convergent tail ``h`` (with
    ``g = 1/(u + h)``), both in extended precision.  Forty terms reach long
    double accuracy for ``u >= 5``.  Working with ``g`` and ``h`` avoids the
    cancellation in ``t + r`` and in ``1 - r (t + r)``.
    """
    acc = np.zeros_like(u)
    for k in range(terms, 1, -1):
        acc = k / (u + acc)
    return 1 / (u + acc), acc


def _zeta(t):
    return np.asarray(mills_ratio(t), dtype=np.float64)


def log_ndtr(t):
    """Stable ``log Phi(t)``."""
    return special.log_ndtr(t)


def _left_tail(mu, sigma, sign):
    """Entries with ``sign mu / sigma <= -5`` and their continued-fraction terms."""
    tail = sign * mu / sigma <= -5.0
    if not np.any(tail):
        return tail, None, None, None
    u = -(sign[tail].astype(np.longdouble) * mu[tail].astype(np.longdouble) / sigma[tail].astype(np.longdouble))
    g, h = _left_tail_fraction(u)
    return tail, u, g, h


def tn_mean(mu, sigma, sign):
    """Mean of ``N(mu, sigma^2)`` truncated to ``sign * z > 0``.

    Deep in the tail ``mu + sign sigma r`` is a small difference of large
    terms, so it is taken from the continued fraction there instead.
    """
    mu, sigma, sign = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu, sigma, sign)))
    out = mu + sign * sigma * _zeta(sign * mu / sigma)
    tail, _, g, _ = _left_tail(mu, sigma, sign)
    if g is not None:
        # mu + sign sigma r = sign sigma (a + r) and a + r = g
        out = np.array(out)
        out[tail] = sign[tail] * sigma[tail] * g
    return out[()] if out.ndim == 0 else out


def tn_var(mu, sigma, sign):
    """Variance of ``N(mu, sigma^2)`` truncated to ``sign * z > 0``.

    Computed as ``sigma^2 [1 - r (a + r)]`` with ``a = sign mu / sigma`` and
    ``r = phi(a)/Phi(a)``.  The bracket cancels heavily for ``a << 0``, so it is
    formed in extended precision and, for ``a <= -5``, rewritten through the
    continued fraction so that no cancellation is left.
    """
    mu, sigma, sign = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu, sigma, sign)))
    a = np.array(sign * mu / sigma, dtype=np.longdouble)
    r = np.array(mills_ratio(sign * mu / sigma), dtype=np.longdouble)
    bracket = np.array(1 - r * (a + r))
    tail, u, g, h = _left_tail(mu, sigma, sign)
    if g is not None:
        # 1 - (u + g) g with g = 1/(u + h) equals (h - g)/(u + h)
        bracket[tail] = (h - g) / (u + h)
    out = (sigma * sigma) * np.asarray(bracket, dtype=np.float64)
    return out[()] if out.ndim == 0 else out


def tn_second_moment(mu, sigma, sign):
    """``E z^2 = mu^2 + sigma^2 + sign mu sigma r`` for the truncated normal."""
    mu, sigma, sign = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu, sigma, sign)))
    out = mu * mu + sigma * sigma + sign * mu * sigma * _zeta(sign * mu / sigma)
    tail = sign * mu / sigma <= -5.0
    if np.any(tail):
        # the closed form cancels here; var + mean^2 does not
        out = np.array(out)
        m = tn_mean(mu[tail], sigma[tail], sign[tail])
        out[tail] = tn_var(mu[tail], sigma[tail], sign[tail]) + m * m
    return out[()] if out.ndim == 0 else out


def sample_std_above(lower, rng: np.random.Generator):
    """Draw ``v ~ N(0, 1)`` conditioned on ``v > lower`` (elementwise).

    Bounds at or below the mode use the inverse CDF; bounds above it use
    exponential-proposal rejection with the optimal rate
    ``(c + sqrt(c^2 + 4)) / 2``, which never starves in the far tail.
    """
    lower = np.asarray(lower, dtype=np.float64)
    shape = lower.shape
    c = lower.reshape(-1)
    out = np.empty_like(c)

    inv = c <= 0
    if np.any(inv):
        ci = c[inv]
        u = 1.0 - rng.random(ci.shape)
        out[inv] = -special.ndtri(u * special.ndtr(-ci))

    tail = np.flatnonzero(~inv)
    while tail.size:
        ct = c[tail]
        rate = 0.5 * (ct + np.sqrt(ct * ct + 4.0))
        x = ct + rng.standard_exponential(ct.shape) / rate
        u = rng.random(ct.shape)
        ok = u <= np.exp(-0.5 * (x - rate) ** 2)
        out[tail[ok]] = x[ok]
        tail = tail[~ok]

    # the support is open: redraw anything that rounded onto the bound
    bad = np.flatnonzero(~(out > c))
    if bad.size:
        out[bad] = sample_std_above(c[bad], rng)
    return out.reshape(shape)[()] if shape == () else out.reshape(shape)


def tn_sample(mu, sigma, sign, rng: np.random.Generator, size=None):
    """Draw from ``N(mu, sigma^2)`` truncated to ``sign * z > 0``.

    ``size`` adds leading draw dimensions in front of the broadcast parameter
    shape.  Every returned draw satisfies ``sign * z > 0`` exactly.
    """
    mu, sigma, sign = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu, sigma, sign)))
    if size is not None:
        lead = (size,) if np.isscalar(size) else tuple(size)
        shape = lead + mu.shape
        mu, sigma, sign = (np.broadcast_to(a, shape) for a in (mu, sigma, sign))
    v = sample_std_above(-sign * mu / sigma, rng)
    z = mu + sign * sigma * v
    bad = np.flatnonzero(~(sign * z > 0).reshape(-1))
    while bad.size:
        zf = z.reshape(-1)
        m, s, g = (a.reshape(-1)[bad] for a in (mu, sigma, sign))
        zf[bad] = m + g * s * sample_std_above(-g * m / s, rng)
        z = zf.reshape(z.shape)
        bad = bad[~(g * zf[bad] > 0)]
    return z[()] if z.ndim == 0 else z


@dataclass(frozen=True)
class TruncNormParams:
    """Location, scale and truncation side of a univariate truncated normal."""

    mu: float
    sigma: float
    sign: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 (z > 0) or -1 (z < 0)")

    @classmethod
    def from_label(cls, mu, sigma, y):
        return cls(mu, sigma, 1 if y else -1)

    def mean(self):
        return float(tn_mean(self.mu, self.sigma, self.sign))

    def var(self):
        return float(tn_var(self.mu, self.sigma, self.sign))

    def sample(self, rng, size=None):
        return tn_sample(self.mu, self.sigma, self.sign, rng, size=size)
