"""Constrained energy curves q -> E(q; rho, lambda), overlap-gap detection and phase scans.

E(q; rho, lambda) = lambda q^2 + min P(rho, q), and the minimiser of P does
not depend on lambda, so one set of solves per (rho, q) serves every signal
strength.  Solves are memoised in-process by (rho, q, beta, solver config).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimators import verdict_thresholds
from .parisi.pde import SolverConfig
from .parisi.solve import ParisiSolution, minimize

log = logging.getLogger(__name__)

EPSILONS = (0.05, 0.1, 0.2, 0.3)
ALPHA_MAX = 2.0 - math.sqrt(2.0)

_CACHE: dict[tuple, ParisiSolution] = {}


def _key(rho, q, beta, config: SolverConfig):
    return (round(float(rho), 15), round(float(q), 15), beta,
            json.dumps(config.to_dict(), sort_keys=True))


def clear_cache():
    _CACHE.clear()


def solve_point(rho: float, q: float, config: SolverConfig | None = None,
                beta: float | None = None) -> ParisiSolution:
    """min P at (rho, q) for lambda = 0, memoised."""
    config = config or SolverConfig()
    key = _key(rho, q, beta, config)
    if key not in _CACHE:
        _CACHE[key] = minimize(rho, q, 0.0, beta=beta, config=config)
    return _CACHE[key]


def _solve_task(args):
    rho, q, cfg = args
    return minimize(rho, q, 0.0, config=SolverConfig.from_dict(cfg))


def solve_points(rho, qs, config=None, workers: int = 1) -> list[ParisiSolution]:
    config = config or SolverConfig()
    todo = [q for q in qs if _key(rho, q, None, config) not in _CACHE]
    if todo and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            for q, sol in zip(todo, pool.map(_solve_task, [(rho, q, config.to_dict()) for q in todo])):
                _CACHE[_key(rho, q, None, config)] = sol
    return [solve_point(rho, q, config) for q in qs]


def default_q_grid(rho: float, n_linear: int = 40, n_geometric: int = 10) -> np.ndarray:
    """Linear interior points united with the geometric mesh rho^(2 -+ j/10), j = 0..10.

    The points rho^(2 + j/10) below rho^2 give the left witness of the overlap
    gap a place to sit when the linear spacing rho/41 exceeds rho^2.
    """
    lin = np.linspace(0.0, rho, n_linear + 2)[1:-1]
    j = np.arange(-n_geometric, n_geometric + 1) / n_geometric
    geo = rho ** (2.0 - j)
    q = np.union1d(lin, geo)
    q = q[(q > 0) & (q < rho * (1 - 1e-9))]
    return _dedupe(q)


def _dedupe(q, rel=1e-9):
    q = np.sort(np.asarray(q, dtype=float))
    keep = np.concatenate([[True], np.diff(q) > rel * np.maximum(q[1:], 1e-300)])
    return q[keep]


def _stencil_slope(z: np.ndarray, y: np.ndarray, i: int) -> float:
    """Derivative at z[i] of the polynomial interpolating (z, y)."""
    zi = z[i]
    total = 0.0
    for j in range(len(z)):
        if j == i:
            total += y[j] * sum(1.0 / (zi - z[k]) for k in range(len(z)) if k != i)
            continue
        num = np.prod([zi - z[k] for k in range(len(z)) if k not in (i, j)])
        den = np.prod([z[j] - z[k] for k in range(len(z)) if k != j])
        total += y[j] * num / den
    return float(total)


def central_differences(x: np.ndarray, y: np.ndarray, points: int = 5) -> np.ndarray:
    """Centred finite differences on a nonuniform grid; nan at the two ends.

    Interior points use the ``points``-point centred stencil where it fits and
    the three-point stencil next to the ends.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    half = points // 2
    d = np.full(n, np.nan)
    for i in range(1, n - 1):
        h = half if half <= i <= n - 1 - half else 1
        d[i] = _stencil_slope(x[i - h:i + h + 1], y[i - h:i + h + 1], h)
    return d


@dataclass
class EnergyCurve:
    rho: float
    lam: float
    q_grid: np.ndarray
    E: np.ndarray
    min_P: np.ndarray
    dE_formula: np.ndarray
    dE_fd: np.ndarray
    lambdas: np.ndarray                   # (n, 2) optimal Lambda1, Lambda2
    mass: np.ndarray
    atom: np.ndarray
    converged: np.ndarray
    solutions: list = field(repr=False, default_factory=list)

    def with_lambda(self, lam: float) -> "EnergyCurve":
        E = lam * self.q_grid**2 + self.min_P
        dE = 2.0 * lam * self.q_grid + (self.lambdas[:, 1] - self.lambdas[:, 0])
        return EnergyCurve(self.rho, lam, self.q_grid, E, self.min_P, dE,
                           central_differences(self.q_grid, E), self.lambdas, self.mass,
                           self.atom, self.converged, self.solutions)

    def subset(self, idx) -> "EnergyCurve":
        idx = np.asarray(idx)
        return EnergyCurve(self.rho, self.lam, self.q_grid[idx], self.E[idx], self.min_P[idx],
                           self.dE_formula[idx], central_differences(self.q_grid[idx], self.E[idx]),
                           self.lambdas[idx], self.mass[idx], self.atom[idx], self.converged[idx],
                           [self.solutions[i] for i in idx] if self.solutions else [])

    def derivative_agreement(self) -> np.ndarray:
        """Per interior point: |dE_formula - dE_fd| <= max(1e-3, 1e-2 |dE_formula|)."""
        inner = slice(1, -1)
        err = np.abs(self.dE_formula[inner] - self.dE_fd[inner])
        return err <= np.maximum(1e-3, 1e-2 * np.abs(self.dE_formula[inner]))

    def rows(self) -> list[dict]:
        return [dict(q=float(q), E=float(e), dE_formula=float(d), dE_fd=float(f),
                     Lambda1=float(L[0]), Lambda2=float(L[1]), mass_m=float(mm), c=float(c))
                for q, e, d, f, L, mm, c in zip(self.q_grid, self.E, self.dE_formula, self.dE_fd,
                                                self.lambdas, self.mass, self.atom)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["q", "E", "dE_formula", "dE_fd", "Lambda1", "Lambda2", "mass_m", "c"]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({k: repr(v) for k, v in r.items()})
        return buf.getvalue()


def energy_curve(rho: float, lam: float, q_grid=None, config: SolverConfig | None = None,
                 workers: int = 1) -> EnergyCurve:
    """Solve at every q of the grid; failed solves are flagged, not raised."""
    config = config or SolverConfig()
    q = default_q_grid(rho) if q_grid is None else _dedupe(q_grid)
    if np.any(q <= 0) or np.any(q >= rho):
        raise ValueError("q_grid must lie inside (0, rho)")
    sols = solve_points(rho, q, config, workers)
    q_used = np.array([s.q for s in sols])
    min_P = np.array([s.P_value for s in sols])
    L = np.array([s.lambda_star for s in sols])
    E = lam * q_used**2 + min_P
    dE = 2.0 * lam * q_used + (L[:, 1] - L[:, 0])
    return EnergyCurve(rho, lam, q_used, E, min_P, dE, central_differences(q_used, E), L,
                       np.array([s.nu_star.absolutely_continuous_mass() for s in sols]),
                       np.array([s.nu_star.atom_c for s in sols]),
                       np.array([s.converged for s in sols]), sols)


# ---------------------------------------------------------------------------
# overlap gap detection


@dataclass
class OgpVerdict:
    holds: bool
    epsilon: float
    witnesses: tuple | None            # (w, x, y)
    margins: dict                      # condition -> margin (positive means satisfied)
    tolerance: float
    diagnostic: str = ""
    derivative_signs: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(holds=self.holds, epsilon=self.epsilon,
                    witnesses=list(self.witnesses) if self.witnesses else None,
                    margins=self.margins, tolerance=self.tolerance, diagnostic=self.diagnostic,
                    derivative_signs=self.derivative_signs)


def detect_ogp(q, E, rho: float, epsilon: float, tolerance: float = 0.0,
               dE=None) -> OgpVerdict:
    """Search grid witnesses w < x < y for the three overlap-gap conditions.

    (1) w < rho^2 < x and y < rho^(1 + eps); (2) max(E(w), E(y)) < E(x);
    (3) sup over (w, eps rho] of E < sup over [eps rho, rho] of E.
    Margins of (2) and (3) must both exceed ``tolerance``; the witness triple
    maximising the smaller margin is reported.  Suprema are over grid points.
    """
    q = np.asarray(q, dtype=float)
    E = np.asarray(E, dtype=float)
    order = np.argsort(q)
    q, E = q[order], E[order]
    r2, ytop, cut = rho**2, rho ** (1.0 + epsilon), epsilon * rho
    upper = E[(q >= cut) & (q <= rho)]
    sup_upper = upper.max() if upper.size else -np.inf
    best = (-np.inf, None, None)
    W = np.flatnonzero(q < r2)
    X = np.flatnonzero(q > r2)
    for iw in W:
        lower = E[(q > q[iw]) & (q <= cut)]
        sup_lower = lower.max() if lower.size else -np.inf
        m3 = sup_upper - sup_lower
        if m3 <= best[0]:
            continue
        for ix in X:
            Y = np.flatnonzero((q > q[ix]) & (q < ytop))
            if not Y.size:
                continue
            iy = Y[np.argmin(E[Y])]
            m2 = E[ix] - max(E[iw], E[iy])
            score = min(m2, m3)
            if score > best[0]:
                best = (score, (float(q[iw]), float(q[ix]), float(q[iy])),
                        dict(condition2=float(m2), condition3=float(m3)))
    signs = {}
    if dE is not None:
        dE = np.asarray(dE, dtype=float)[order]
        i0 = int(np.argmin(np.abs(q - r2)))
        neg = np.flatnonzero((q > r2) & (q < ytop) & (dE < 0))
        signs = dict(at_rho2=float(dE[i0]),
                     first_negative=float(q[neg[0]]) if neg.size else None)
    score, wit, margins = best
    if wit is None:
        return OgpVerdict(False, epsilon, None, {}, tolerance, "no admissible witness triple", signs)
    holds = bool(score > tolerance)
    diag = "" if holds else ("margins below tolerance" if score > 0 else "conditions violated")
    return OgpVerdict(holds, epsilon, wit, margins, tolerance, diag, signs)


def detect_ogp_curve(curve: EnergyCurve, epsilon: float, tolerance: float = 0.0) -> OgpVerdict:
    return detect_ogp(curve.q_grid, curve.E, curve.rho, epsilon, tolerance, curve.dE_formula)


def scan_epsilon(q, E, rho, tolerance=0.0, epsilons=EPSILONS, dE=None) -> OgpVerdict:
    """Largest epsilon in the list with a passing verdict (else the verdict at the smallest)."""
    verdicts = [detect_ogp(q, E, rho, eps, tolerance, dE) for eps in sorted(epsilons)]
    passing = [v for v in verdicts if v.holds]
    return passing[-1] if passing else verdicts[0]


def solver_noise(rho: float, q_points, config: SolverConfig | None = None) -> float:
    """Largest change of min P at the given q under perturbed solver settings."""
    config = config or SolverConfig()
    variants = [config.replace(grid_dx=0.5 * config.grid_dx),
                config.replace(L_factor=1.5 * config.L_factor),
                config.replace(K=config.K + config.K // 2)]
    noise = 0.0
    for q in q_points:
        base = solve_point(rho, q, config).P_value
        for cfg in variants:
            noise = max(noise, abs(solve_point(rho, q, cfg).P_value - base))
    return noise


def noise_probe_points(rho: float, q_grid) -> list[float]:
    """Three grid points used for the noise estimate: nearest to rho^2, rho^1.5 and rho/2."""
    q_grid = np.asarray(q_grid)
    return sorted({float(q_grid[np.argmin(np.abs(q_grid - t))]) for t in (rho**2, rho**1.5, 0.5 * rho)})


# ---------------------------------------------------------------------------
# phase scans


def slepian_line(rho: float) -> float:
    """2 sqrt(rho^3 log(1/rho)): leading-order bound on the null ground state."""
    return 2.0 * math.sqrt(rho**3 * math.log(1.0 / rho))


def regime_ceiling(rho: float) -> float:
    """rho^-(2 - sqrt 2): above this lambda the overlap-gap guarantee does not apply."""
    return rho ** (-ALPHA_MAX)


def lambda_from_c1(c1: float):
    """Rule lambda = c1 sqrt((1/rho) log(1/rho))."""
    return lambda rho: [c1 * math.sqrt(math.log(1.0 / rho) / rho)]


@dataclass
class ScanRow:
    rho: float
    lam: float
    ogp: bool
    epsilon: float
    witnesses: tuple | None
    margin: float
    tolerance: float
    regime_warning: bool
    thresholds: dict
    slepian: float
    submatrix_limit: float
    E_rho2: float

    def as_dict(self):
        d = dict(rho=self.rho, **{"lambda": self.lam}, ogp=self.ogp, epsilon=self.epsilon,
                 w=None, x=None, y=None, margin=self.margin, tolerance=self.tolerance,
                 regime_warning=self.regime_warning, slepian=self.slepian,
                 submatrix_limit=self.submatrix_limit, E_rho2=self.E_rho2)
        if self.witnesses:
            d["w"], d["x"], d["y"] = self.witnesses
        d.update({k: v for k, v in self.thresholds.items() if k not in ("rho", "lambda")})
        return d


def phase_scan(rho_list, lambda_rule, epsilons=EPSILONS, config: SolverConfig | None = None,
               q_grid_fn=default_q_grid, estimate_noise: bool = True,
               workers: int = 1) -> list[ScanRow]:
    """Verdicts and reference lines for every rho and every lambda produced by the rule.

    ``lambda_rule`` maps rho to a list of lambdas.  Lambdas at or above the
    regime ceiling are still evaluated but flagged with a warning.
    """
    config = config or SolverConfig()
    rows = []
    for rho in rho_list:
        base = energy_curve(rho, 0.0, q_grid_fn(rho), config, workers)
        tol = 0.0
        if estimate_noise:
            tol = 3.0 * solver_noise(rho, noise_probe_points(rho, base.q_grid), config)
        i2 = int(np.argmin(np.abs(base.q_grid - rho**2)))
        e_rho2 = float(base.min_P[i2])
        for lam in lambda_rule(rho):
            warn = lam >= regime_ceiling(rho)
            if warn:
                warnings.warn(f"lambda={lam:.4g} >= rho^-(2-sqrt2)={regime_ceiling(rho):.4g} at "
                              f"rho={rho}: outside the overlap-gap regime", stacklevel=2)
            curve = base.with_lambda(lam)
            v = scan_epsilon(curve.q_grid, curve.E, rho, tol, epsilons, curve.dE_formula)
            margin = min(v.margins.values()) if v.margins else -math.inf
            rows.append(ScanRow(rho, lam, v.holds, v.epsilon, v.witnesses, margin, tol, warn,
                                verdict_thresholds(rho, lam).as_dict(), slepian_line(rho),
                                e_rho2 / math.sqrt(2.0), e_rho2))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
