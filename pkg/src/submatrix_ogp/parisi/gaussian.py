"""Standard normal helpers and the closed-form Cole-Hopf layer for (y)_+ data."""

from __future__ import annotations

import numpy as np
from scipy import special

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def log_norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def gaussian_call(lam, sigma):
    """E[(lam + sigma Z)_+] for standard normal Z."""
    lam = np.asarray(lam, dtype=float)
    z = lam / sigma
    return sigma * norm_pdf(z) + lam * norm_cdf(z)


def plus_layer(y, m: float, s: float):
    """One Cole-Hopf layer applied to terminal data (y)_+.

    Returns ``(u, ux, dudm)`` where

        u(y)    = m^{-1} log E exp(m (y + sZ)_+)     (E[(y + sZ)_+] if m == 0)
        ux(y)   = d u / d y
        dudm(y) = d u / d m

    evaluated in log space so that large ``m * y`` does not overflow.
    """
    y = np.asarray(y, dtype=float)
    z = y / s
    if m == 0.0:
        cdf = norm_cdf(z)
        pdf = norm_pdf(z)
        u = s * pdf + y * cdf
        second = (y * y + s * s) * cdf + y * s * pdf
        return u, cdf, 0.5 * (second - u * u)

    log_below = special.log_ndtr(-z)
    log_a = m * y + 0.5 * m * m * s * s + special.log_ndtr(z + m * s)
    log_w = np.logaddexp(log_below, log_a)
    u = log_w / m
    ux = np.exp(log_a - log_w)

    # tilted mean of (y + sZ)_+ ; d/dm of E[e^{m X}; X > 0] = A (y + m s^2) + s phi(y/s)
    tilted = ux * (y + m * s * s) + np.exp(np.log(s) + log_norm_pdf(z) - log_w)
    spread = np.abs(y) + 10.0 * s
    small = m * spread < 1e-3
    dudm = np.empty_like(u)
    big = ~small
    dudm[big] = (tilted[big] - u[big]) / m
    if np.any(small):
        ys, zs = y[small], z[small]
        cdf, pdf = norm_cdf(zs), norm_pdf(zs)
        m1 = s * pdf + ys * cdf
        m2 = (ys * ys + s * s) * cdf + ys * s * pdf
        m3 = (ys**3 + 3.0 * ys * s * s) * cdf + s * (ys * ys + 2.0 * s * s) * pdf
        k2 = m2 - m1 * m1
        k3 = m3 - 3.0 * m1 * m2 + 2.0 * m1**3
        dudm[small] = 0.5 * k2 + m * k3 / 3.0
        # log_w / m cancels catastrophically when m * spread is tiny
        tiny = m * spread[small] < 1e-5
        u_small = u[small]
        u_small[tiny] = (m1 + 0.5 * m * k2 + m * m * k3 / 6.0)[tiny]
        u[small] = u_small
    return u, ux, dudm
