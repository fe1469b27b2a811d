"""Backward solver for the Parisi-type PDE

    d_t u + 2 (u_yy + m(t) u_y^2) = 0,   u(rho, y) = f(y),

with f(y) = (y)_+ at zero temperature and f(y) = log(1 + e^{beta y}) / beta at
finite beta.  The coordinate ``y = x + Lambda + 2c`` absorbs the terminal
shift, so one solve serves both species: ``u^i(0, 0) = U(0, Lambda_i + 2c)``.

On each interval [t_k, t_{k+1}) with constant m the Cole-Hopf transform gives
the exact layer map

    U(t_k, y) = m^{-1} log E exp(m U(t_{k+1}, y + s_k Z)),   s_k = 2 sqrt(dt_k),

(plain heat averaging when m = 0).  The layer adjacent to rho is evaluated in
closed form (zero temperature) or by fine quadrature (finite beta); the inner
layers use trapezoid convolution on a uniform grid that contains y = 0, and
the layer ending at t = 0 is evaluated directly at the query points.  Outside
the grid U is continued by its asymptotes, 0 on the left and y + 2 int_t^rho m
on the right.

Everything needed for the exact gradient of the discrete map with respect to
the step heights m_k is kept, so ``gradient_m`` is a reverse sweep over the
stored levels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special
from scipy.interpolate import CubicSpline

from .gaussian import log_norm_pdf, norm_ppf, plus_layer
from .measure import OrderParameterMeasure

TAIL = 8.5          # Gaussian window half-width in standard deviations
SMALL_TILT = 1e-5   # below this m * spread the cumulant expansion is used
MAX_GRID = 400_000


class TruncationLeak(RuntimeError):
    """The spatial domain was too small even after enlarging it."""


@dataclass
class SolverConfig:
    K: int = 32
    gh_nodes: int = 41
    grid_dx: float = 0.25
    L_factor: float = 10.0
    tol: float = 1e-9
    max_iter: int = 500
    method: str = "grid"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.gh_nodes < 3:
            raise ValueError("gh_nodes must be at least 3")
        if not 0 < self.grid_dx <= 1:
            raise ValueError("grid_dx must lie in (0, 1]")
        if self.L_factor <= 0:
            raise ValueError("L_factor must be positive")
        if self.method not in ("grid", "hermite"):
            raise ValueError(f"unknown method {self.method!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown solver config fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# layer primitives


def softplus(y, beta):
    y = np.asarray(y, dtype=float)
    return np.logaddexp(0.0, beta * y) / beta


def _tilt_window(m, s):
    """Window in units of s: [-TAIL, TAIL + m s]; the tilt shifts mass right."""
    return TAIL, TAIL + max(0.0, m * s)


def _layer_from_diffs(d, kern, m, need_dm=True):
    """Shared Cole-Hopf layer on centred samples.

    ``d[j, l]`` are samples of U(t+, y_j + offset_l) minus a per-row reference,
    ``kern[..., l]`` normalised Gaussian weights (broadcastable).  Returns
    (increment over the reference, tilted weights, d/dm of the layer value).
    """
    if m == 0.0:
        inc = np.sum(kern * d, axis=-1)
        P = np.broadcast_to(kern, d.shape)
        dm = None
        if need_dm:
            c = d - inc[..., None]
            dm = 0.5 * np.sum(kern * c * c, axis=-1)
        return inc, P, dm
    em1 = np.expm1(m * d)
    S = np.sum(kern * em1, axis=-1)
    inc = np.log1p(S) / m
    P = kern * (1.0 + em1) / (1.0 + S)[..., None]
    dm = None
    if need_dm:
        spread = float(np.max(np.abs(d))) if d.size else 0.0
        if m * spread < SMALL_TILT:
            mu = np.sum(kern * d, axis=-1)
            c = d - mu[..., None]
            k2 = np.sum(kern * c * c, axis=-1)
            k3 = np.sum(kern * c**3, axis=-1)
            dm = 0.5 * k2 + m * k3 / 3.0
        else:
            dm = (np.sum(P * d, axis=-1) - inc) / m
    return inc, P, dm


def softplus_layer(y, m, s, beta):
    """One Cole-Hopf layer applied to softplus terminal data at arbitrary points."""
    y = np.asarray(y, dtype=float)
    lo, hi = _tilt_window(m, s)
    h = min(0.25, 0.25 / (beta * s))
    z = np.arange(-np.ceil(lo / h), np.ceil(hi / h) + 1) * h
    kern = np.exp(log_norm_pdf(z))
    kern /= kern.sum()
    u_out = np.empty_like(y)
    ux_out = np.empty_like(y)
    dm_out = np.empty_like(y)
    chunk = max(1, 2_000_000 // len(z))
    for a in range(0, len(y), chunk):
        yc = y[a:a + chunk]
        pts = yc[:, None] + s * z[None, :]
        ref = softplus(yc, beta)
        d = softplus(pts, beta) - ref[:, None]
        inc, P, dm = _layer_from_diffs(d, kern, m)
        u_out[a:a + chunk] = ref + inc
        ux_out[a:a + chunk] = np.sum(P * special.expit(beta * pts), axis=-1)
        dm_out[a:a + chunk] = dm
    return u_out, ux_out, dm_out


def terminal_layer(y, m, s, beta):
    if beta is None:
        return plus_layer(y, m, s)
    return softplus_layer(y, m, s, beta)


# ---------------------------------------------------------------------------
# solution object


class PDESolution:
    """Backward solution of the PDE for one order-parameter measure.

    ``evaluate(y)`` returns (U(0, y), U_y(0, y)); ``gradient_m`` the exact
    gradient of a weighted sum of U(0, y_i) with respect to the step heights.
    """

    def __init__(self, measure: OrderParameterMeasure, config: SolverConfig | None = None,
                 span=(0.0, 0.0), L_factor: float | None = None):
        self.measure = measure
        self.config = config or SolverConfig()
        self.beta = measure.beta
        self.m = measure.m_values.copy()
        self.t = measure.breaks.copy()
        self.dt = np.diff(self.t)
        self.s = 2.0 * np.sqrt(self.dt)
        K = len(self.m)
        self.K = K
        # D[k] = 2 int_{t_k}^{rho} m, the right asymptotic offset at level k
        self.D = np.concatenate([2.0 * np.cumsum((self.m * self.dt)[::-1])[::-1], [0.0]])
        self.L_factor = self.config.L_factor if L_factor is None else L_factor
        sigma = 2.0 * np.sqrt(measure.rho)
        M = measure.absolutely_continuous_mass()
        lo = min(float(span[0]), -4.0 * M) - self.L_factor * sigma
        hi = max(float(span[1]), 0.0) + self.L_factor * sigma
        self.lo, self.hi = lo, hi
        if K == 1:
            self.dx = None
            return
        dx = self.config.grid_dx * float(np.min(self.s))
        j0 = int(np.floor(lo / dx))
        j1 = int(np.ceil(hi / dx))
        n = j1 - j0 + 1
        if n > MAX_GRID:
            raise ValueError(f"spatial grid of {n} points exceeds the limit; coarsen breakpoints")
        self.dx, self.j0, self.n = dx, j0, n
        self.y = (j0 + np.arange(n)) * dx
        self._solve_levels()

    # -- grid helpers -------------------------------------------------------

    def _gather(self, level_u, idx, k, deriv=False):
        """Values at grid indices ``idx`` of level k, continued by asymptotes."""
        n = self.n
        out = np.empty(idx.shape)
        inside = (idx >= 0) & (idx < n)
        out[inside] = level_u[idx[inside]]
        left = idx < 0
        right = idx >= n
        if deriv:
            out[left] = 0.0
            out[right] = 1.0
        else:
            out[left] = 0.0
            out[right] = (self.j0 + idx[right]) * self.dx + self.D[k]
        return out

    def _kernel(self, m, s):
        lo, hi = _tilt_window(m, s)
        wl = int(np.ceil(lo * s / self.dx))
        wr = int(np.ceil(hi * s / self.dx))
        z = np.arange(-wl, wr + 1) * self.dx / s
        kern = np.exp(log_norm_pdf(z))
        return wl, wr, kern / kern.sum()

    def _step_diffs(self, k):
        """Centred window samples for the grid step from level k+1 to level k."""
        m, s = self.m[k], self.s[k]
        wl, wr, kern = self._kernel(m, s)
        idx = np.arange(-wl, self.n + wr)
        ext = self._gather(self.levels[k + 1], idx, k + 1)
        win = sliding_window_view(ext, wl + wr + 1)
        ref = self.levels[k + 1]
        return wl, wr, kern, idx, win - ref[:, None], ref

    def _solve_levels(self):
        K, beta = self.K, self.beta
        self.levels: dict[int, np.ndarray] = {}
        self._steps: dict[int, tuple] = {}
        self.terminal_dm = None
        u, ux, dm = terminal_layer(self.y, self.m[K - 1], self.s[K - 1], beta)
        self.levels[K - 1] = u
        self.terminal_dm = dm
        self.ux_top = ux
        method = self.config.method
        for k in range(K - 2, 0, -1):
            if method == "hermite":
                u, ux = self._hermite_step(k, ux)
            else:
                wl, wr, kern, idx, d, ref = self._step_diffs(k)
                inc, P, dm = _layer_from_diffs(d, kern, self.m[k])
                self._steps[k] = (wl, wr, P, dm)
                u = ref + inc
                uxe = self._gather(ux, idx, k + 1, deriv=True)
                ux = np.sum(P * sliding_window_view(uxe, wl + wr + 1), axis=-1)
            self.levels[k] = u
        self.ux1 = ux

    def _hermite_step(self, k, ux):
        """Gauss-Hermite layer with cubic-spline interpolation (cross-check path)."""
        m, s = self.m[k], self.s[k]
        nodes, weights = np.polynomial.hermite_e.hermegauss(self.config.gh_nodes)
        weights = weights / weights.sum()
        spline = CubicSpline(self.y, self.levels[k + 1])
        dspline = CubicSpline(self.y, ux)

        def value(pts):
            out = spline(np.clip(pts, self.y[0], self.y[-1]))
            out = np.where(pts < self.y[0], 0.0, out)
            return np.where(pts > self.y[-1], pts + self.D[k + 1], out)

        def slope(pts):
            out = dspline(np.clip(pts, self.y[0], self.y[-1]))
            out = np.where(pts < self.y[0], 0.0, out)
            return np.where(pts > self.y[-1], 1.0, out)

        pts = self.y[:, None] + s * nodes[None, :]
        ref = self.levels[k + 1]
        inc, P, _ = _layer_from_diffs(value(pts) - ref[:, None], weights, m, need_dm=False)
        return ref + inc, np.sum(P * slope(pts), axis=-1)

    # -- evaluation at t = 0 ------------------------------------------------

    def _point_diffs(self, y):
        m, s = self.m[0], self.s[0]
        lo, hi = _tilt_window(m, s)
        wl = int(np.ceil(lo * s / self.dx)) + 1
        wr = int(np.ceil(hi * s / self.dx)) + 1
        base = np.floor(y / self.dx).astype(np.int64) - self.j0
        offs = np.arange(-wl, wr + 1)
        idx = base[:, None] + offs[None, :]
        ypts = (self.j0 + idx) * self.dx
        kern = np.exp(log_norm_pdf((ypts - y[:, None]) / s))
        kern /= kern.sum(axis=1, keepdims=True)
        vals = self._gather(self.levels[1], idx, 1)
        ref = self._gather(self.levels[1], base, 1)
        return idx, kern, vals - ref[:, None], ref

    def evaluate(self, y, need_dm=False):
        """Return (U(0, y), U_y(0, y)) and optionally d U(0, y) / d m_0."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self._check_span(y)
        if self.K == 1:
            u, ux, dm = terminal_layer(y, self.m[0], self.s[0], self.beta)
            return (u, ux, dm) if need_dm else (u, ux)
        idx, kern, d, ref = self._point_diffs(y)
        inc, P, dm = _layer_from_diffs(d, kern, self.m[0], need_dm=need_dm)
        uxv = self._gather(self.ux1, idx, 1, deriv=True)
        ux = np.sum(P * uxv, axis=-1)
        return (ref + inc, ux, dm) if need_dm else (ref + inc, ux)

    def _check_span(self, y):
        if self.K > 1 and (np.any(y < self.lo) or np.any(y > self.hi)):
            raise ValueError("query point outside the solved domain")

    # -- gradient -----------------------------------------------------------

    def gradient_m(self, y, weights):
        """d/dm_k of sum_i weights_i U(0, y_i) for every step k."""
        if self.config.method != "grid":
            raise NotImplementedError("gradients are only available for the grid method")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        K = self.K
        grad = np.zeros(K)
        if K == 1:
            _, _, dm = terminal_layer(y, self.m[0], self.s[0], self.beta)
            grad[0] = float(w @ dm)
            return grad
        idx, kern, d, _ = self._point_diffs(y)
        _, P, dm = _layer_from_diffs(d, kern, self.m[0])
        grad[0] = float(w @ dm)
        lam, right = self._scatter_points(idx, w[:, None] * P)
        self._add_pad(grad, right, 1)
        for k in range(1, K - 1):
            wl, wr, P, dm = self._steps[k]
            grad[k] += float(lam @ dm)
            lam, right = self._scatter_step(lam[:, None] * P, wl, wr)
            self._add_pad(grad, right, k + 1)
        grad[K - 1] += float(lam @ self.terminal_dm)
        return grad

    def _add_pad(self, grad, right_mass, level):
        # right asymptote at ``level`` is y + 2 sum_{l >= level} m_l dt_l
        if right_mass != 0.0:
            grad[level:] += 2.0 * right_mass * self.dt[level:]

    def _scatter_points(self, idx, mass):
        n = self.n
        flat_i, flat_w = idx.ravel(), mass.ravel()
        inside = (flat_i >= 0) & (flat_i < n)
        lam = np.bincount(flat_i[inside], weights=flat_w[inside], minlength=n)
        right = float(flat_w[flat_i >= n].sum())
        return lam, right

    def _scatter_step(self, mass, wl, wr):
        n = self.n
        ext = np.zeros(n + wl + wr)
        for l in range(wl + wr + 1):
            ext[l:l + n] += mass[:, l]
        return ext[wl:wl + n], float(ext[wl + n:].sum())

    # -- diagnostics --------------------------------------------------------

    def slope_range(self):
        """(min, max) of U_y over the stored grid levels."""
        if self.K == 1:
            return 0.0, 1.0
        return float(min(self.ux1.min(), self.ux_top.min())), float(max(self.ux1.max(), self.ux_top.max()))


def solve_field(measure, config=None, span=(0.0, 0.0), L_factor=None) -> PDESolution:
    """Solve for the reduced measure (atom at rho handled by the caller's shift)."""
    return PDESolution(measure, config, span=span, L_factor=L_factor)


def query_span(rho, q, M):
    """Interval that contains both optimal Lambda for overlap q and mass M."""
    sigma = 2.0 * np.sqrt(rho)
    p = np.clip([q / rho, (rho - q) / (1.0 - rho)], 1e-12, 1 - 1e-12)
    z = sigma * norm_ppf(p)
    return float(z.min() - 4.0 * M - 2.0 * sigma), float(z.max() + 2.0 * sigma)
