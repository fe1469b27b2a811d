"""Reference values of U(0, y) for m with at most two nonzero steps.

Independent of the grid solver: the cascade recursion

    Y_r = (y + 2 B_rho)_+,   Y_{k} = m_k^{-1} log E_k exp(m_k Y_{k+1})

is evaluated with nested adaptive quadrature (``scipy.integrate.quad``) over
the Gaussian increments, using only the elementary closed form for the first
layer at zero temperature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special


def _phi(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _gauss_expect(f, centre, s, shift=0.0, tilt_width=0.0):
    """E f(centre + s Z), integrating Z over [-12, 12 + tilt_width] with breakpoints."""
    if s == 0.0:
        return f(centre)
    pts = [shift]
    val, _ = integrate.quad(lambda z: f(centre + s * z) * _phi(z), -12.0, 12.0 + tilt_width,
                            points=pts, limit=400, epsabs=1e-14, epsrel=1e-13)
    return val


def _first_layer(y, m, s):
    """m^{-1} log E exp(m (y + s Z)_+) evaluated by the elementary formula."""
    if s == 0.0:
        return max(y, 0.0)
    z = y / s
    if m == 0.0:
        return s * _phi(z) + y * special.ndtr(z)
    below = special.ndtr(-z)
    above = math.exp(m * y + 0.5 * m * m * s * s) * special.ndtr(z + m * s)
    return math.log(below + above) / m


def cascade_value(y: float, steps, rho: float) -> float:
    """U(0, y) for m piecewise constant.

    ``steps`` is a list of ``(t_start, m)`` pairs with increasing ``t_start``
    beginning at 0; the last piece runs to rho.  At most three pieces.
    """
    if len(steps) > 3:
        raise ValueError("reference recursion supports at most three pieces")
    starts = [t for t, _ in steps] + [rho]
    ms = [m for _, m in steps]
    widths = [b - a for a, b in zip(starts[:-1], starts[1:])]
    sd = [2.0 * math.sqrt(w) for w in widths]

    def level(k, x):
        """U(t_k, x)."""
        if k == len(ms) - 1:
            return _first_layer(x, ms[k], sd[k])
        m, s = ms[k], sd[k]
        ref = level(k + 1, x)
        if m == 0.0:
            return _gauss_expect(lambda w: level(k + 1, w), x, s, -x / s if s else 0.0)
        tilt = m * s
        g = _gauss_expect(lambda w: math.exp(m * (level(k + 1, w) - ref)), x, s,
                          -x / s if s else 0.0, tilt)
        return ref + math.log(g) / m

    return level(0, float(y))


def random_steps(rng: np.random.Generator, rho: float, n_steps: int):
    """Random one- or two-step m with breakpoints away from the ends."""
    if n_steps == 1:
        t1 = float(rng.uniform(0.15, 0.85) * rho)
        return [(0.0, 0.0), (t1, float(rng.uniform(0.2, 6.0)))]
    t1, t2 = np.sort(rng.uniform(0.1, 0.9, size=2)) * rho
    while t2 - t1 < 0.1 * rho:
        t1, t2 = np.sort(rng.uniform(0.1, 0.9, size=2)) * rho
    k1 = float(rng.uniform(0.1, 3.0))
    k2 = k1 + float(rng.uniform(0.1, 5.0))
    return [(0.0, 0.0), (float(t1), k1), (float(t2), k2)]
