"""Support estimators: spectral rounding, annealed MLE, exact MLE and a random baseline.

Every estimator returns a configuration with exactly N rho_N ones, so its
overlap with the planted support is directly comparable across methods.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import mcmc, oracle
from .model import Configuration, PlantedInstance, configuration, make_rng, random_configuration

DEFAULT_DELTA = 0.5
DEFAULT_CUTOFF = 0.5


@dataclass
class EstimateReport:
    estimator: str
    v_hat: Configuration
    overlap_frac: float            # <v, v_hat> / (N rho_N)
    verdict: bool                  # overlap_frac > cutoff
    runtime: float                 # seconds
    seed: int
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def row(self, inst: PlantedInstance) -> dict:
        return dict(estimator=self.estimator, N=inst.N, rho=inst.rho, **{"lambda": inst.lam},
                    seed=self.seed, overlap_frac=self.overlap_frac, verdict=self.verdict,
                    runtime_ms=1e3 * self.runtime)


def _report(name, inst, x, t0, seed, cutoff, converged=True, **extra):
    frac = x.cached_overlap / inst.k
    return EstimateReport(name, x, frac, frac > cutoff, time.perf_counter() - t0, seed,
                          converged, extra)


# ---------------------------------------------------------------------------
# spectral rounding


@dataclass
class Eigenpair:
    value: float
    vector: np.ndarray             # unit 2-norm
    iterations: int
    converged: bool
    residual: float


def top_eigenpair(A: np.ndarray, rng: np.random.Generator, tol: float = 1e-8,
                  max_iter: int = 20_000, method: str = "power") -> Eigenpair:
    """Largest algebraic eigenpair of a symmetric matrix.

    The power method runs on A + s I with s an estimate of the spectral radius,
    so that the top of the spectrum is also the dominant one.  It stops when
    the Rayleigh quotient changes by less than ``tol`` and the residual
    ||A w - theta w|| is below 1e-6.
    """
    N = A.shape[0]
    if method == "eigh":
        vals, vecs = np.linalg.eigh(A)
        w = vecs[:, -1]
        return Eigenpair(float(vals[-1]), w, 0, True, float(np.linalg.norm(A @ w - vals[-1] * w)))
    if method != "power":
        raise ValueError(f"unknown eigensolver {method!r}")
    w = rng.standard_normal(N)
    w /= np.linalg.norm(w)
    # spectral radius estimate from a few unshifted iterations, padded for safety
    z = w.copy()
    for _ in range(30):
        z = A @ z
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        z /= nz
    radius = float(np.linalg.norm(A @ z)) if nz > 0 else 0.0
    shift = 1.05 * radius + 1e-12
    theta = float(w @ A @ w)
    for it in range(1, max_iter + 1):
        Aw = A @ w
        w_new = Aw + shift * w
        w_new /= np.linalg.norm(w_new)
        theta_new = float(w_new @ A @ w_new)
        change = abs(theta_new - theta)
        w, theta = w_new, theta_new
        if change < tol:
            res = float(np.linalg.norm(A @ w - theta * w))
            if res < 1e-6:
                return Eigenpair(theta, w, it, True, res)
    return Eigenpair(theta, w, max_iter, False, float(np.linalg.norm(A @ w - theta * w)))


def round_to_support(scores: np.ndarray, k: int, threshold: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """{i : scores_i >= threshold}, padded or subsampled uniformly to exactly k indices."""
    S = np.flatnonzero(scores >= threshold)
    size = len(S)
    if size > k:
        S = rng.choice(S, k, replace=False)
    elif size < k:
        rest = np.setdiff1d(np.arange(len(scores)), S)
        S = np.concatenate([S, rng.choice(rest, k - size, replace=False)])
    return np.sort(S), size


def spectral_round(inst: PlantedInstance, delta: float = DEFAULT_DELTA, seed: int = 0,
                   method: str = "power", cutoff: float = DEFAULT_CUTOFF,
                   tol: float = 1e-8) -> EstimateReport:
    """Round the top eigenvector of A: keep coordinates >= delta / 2 after scaling to ||.||^2 = N rho_N."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    eig = top_eigenpair(inst.A, rng, tol=tol, method=method)
    w = eig.vector * math.sqrt(inst.k)
    if w.sum() < 0:
        w = -w
    S, size = round_to_support(w, inst.k, delta / 2.0, rng)
    x = configuration(inst, S)
    return _report("spectral", inst, x, t0, seed, cutoff, eig.converged,
                   eigenvalue=eig.value, iterations=eig.iterations, residual=eig.residual,
                   selected=size, selected_frac=size / inst.N, delta=delta)


def set_size_bounds(rho: float, delta: float) -> tuple[float, float]:
    """Range delta^2 rho / 4 <= |S~| / N <= (1 + 4 / delta^2) rho for the thresholded set."""
    return delta * delta * rho / 4.0, (1.0 + 4.0 / (delta * delta)) * rho


# ---------------------------------------------------------------------------
# annealing and exact search


def default_schedule(N: int, beta_start: float = 0.1, beta_end: float = 20.0) -> np.ndarray:
    steps = int(math.ceil(200 * N * math.log(N)))
    return np.geomspace(beta_start, beta_end, steps)


def anneal_mle(inst: PlantedInstance, schedule=None, seed: int = 0,
               cutoff: float = DEFAULT_CUTOFF) -> EstimateReport:
    """Simulated annealing on the swap graph; returns the best configuration seen."""
    t0 = time.perf_counter()
    betas = default_schedule(inst.N) if schedule is None else np.asarray(schedule, dtype=float)
    cfg = mcmc.ChainConfig(beta=float(betas[0]), steps=len(betas), record_stride=1, seed=seed)
    traj = mcmc.run(inst, cfg, beta_schedule=betas)
    return _report("anneal", inst, traj.best, t0, seed, cutoff, True,
                   best_energy=traj.best.cached_energy, best_series=traj.best_energies,
                   proposals=len(betas))


def exact_mle_estimate(inst: PlantedInstance, cutoff: float = DEFAULT_CUTOFF) -> EstimateReport:
    t0 = time.perf_counter()
    _, support = oracle.exact_mle(inst)
    return _report("exact", inst, configuration(inst, support), t0, 0, cutoff)


def random_baseline(inst: PlantedInstance, seed: int = 0,
                    cutoff: float = DEFAULT_CUTOFF) -> EstimateReport:
    t0 = time.perf_counter()
    x = random_configuration(inst, make_rng(seed))
    return _report("random", inst, x, t0, seed, cutoff)


ESTIMATORS = ("spectral", "anneal", "exact", "random")


def run_estimator(name: str, inst: PlantedInstance, seed: int = 0, **kw) -> EstimateReport:
    if name == "spectral":
        return spectral_round(inst, seed=seed, **kw)
    if name == "anneal":
        return anneal_mle(inst, seed=seed, **kw)
    if name == "exact":
        return exact_mle_estimate(inst, **kw)
    if name == "random":
        return random_baseline(inst, seed=seed, **kw)
    raise ValueError(f"unknown estimator {name!r}")


# ---------------------------------------------------------------------------
# reference thresholds


@dataclass
class Thresholds:
    rho: float
    lam: float
    it_line: float          # sqrt((1/rho) log(1/rho)): recovery impossible below this scale
    mle_line: float         # 2 sqrt((1/rho) log(1/rho)): MLE succeeds above
    spectral_line: float    # 1/rho: spectral rounding succeeds above

    @property
    def above_it(self) -> bool:
        return self.lam > self.it_line

    @property
    def above_mle(self) -> bool:
        return self.lam > self.mle_line

    @property
    def above_spectral(self) -> bool:
        return self.lam > self.spectral_line

    @property
    def ordered(self) -> bool:
        """IT <= MLE < spectral; true only for rho below about 0.1162."""
        return self.it_line <= self.mle_line < self.spectral_line

    def as_dict(self) -> dict:
        return {"rho": self.rho, "lambda": self.lam, "it_line": self.it_line,
                "mle_line": self.mle_line, "spectral_line": self.spectral_line,
                "above_it": self.above_it, "above_mle": self.above_mle,
                "above_spectral": self.above_spectral, "ordered": self.ordered}


def verdict_thresholds(rho: float, lam: float = 0.0) -> Thresholds:
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    it = math.sqrt(math.log(1.0 / rho) / rho)
    return Thresholds(rho, lam, it, 2.0 * it, 1.0 / rho)
