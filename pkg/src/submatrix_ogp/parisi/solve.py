"""Minimisation of the functional over (m, Lambda1, Lambda2).

For fixed m the functional is convex in each Lambda_i separately and its
minimiser solves d_Lambda u^i(0, 0) = p_i with p_1 = q / rho and
p_2 = (rho - q) / (1 - rho); this is a monotone scalar root.  The reduced
function M(m) = min_Lambda P has gradient (Danskin)

    dM/dm_k = rho du^1/dm_k + (1 - rho) du^2/dm_k - (t_{k+1}^2 - t_k^2)

at the optimal Lambda, computed by the adjoint sweep of the PDE solver.  The
outer problem is solved over the step heights on the monotone cone (with the
cap m <= beta at finite beta, where m = beta * mu([0, s])).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .gaussian import norm_ppf
from .measure import OrderParameterMeasure, project_isotonic, uniform_breaks
from .pde import PDESolution, SolverConfig, query_span

log = logging.getLogger(__name__)

Q_CLAMP = 1e-6


def clamp_overlap(rho: float, q: float) -> float:
    """Keep q / rho away from 0 and 1 where the quantile conditions degenerate."""
    if not 0.0 <= q <= rho:
        raise ValueError(f"need 0 <= q <= rho, got q={q}, rho={rho}")
    return float(np.clip(q, rho * Q_CLAMP, rho * (1.0 - Q_CLAMP)))


def target_slopes(rho: float, q: float) -> tuple[float, float]:
    return q / rho, (rho - q) / (1.0 - rho)


@dataclass
class ParisiSolution:
    rho: float
    q: float
    lam: float
    beta: float | None
    u1_00: float
    u2_00: float
    lambda_star: tuple[float, float]
    nu_star: OrderParameterMeasure
    P_value: float
    energy: float
    stationarity: dict
    diffusion_quantiles: tuple[float, float]
    converged: bool
    iterations: int
    entropy_offset: bool = False
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mass(self) -> float:
        return self.nu_star.mass()

    @property
    def dE_formula(self) -> float:
        L1, L2 = self.lambda_star
        return 2.0 * self.lam * self.q + (L2 - L1)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "q": self.q,
            "lambda": self.lam,
            "beta": self.beta,
            "u1_00": self.u1_00,
            "u2_00": self.u2_00,
            "Lambda1": self.lambda_star[0],
            "Lambda2": self.lambda_star[1],
            "P_value": self.P_value,
            "energy": self.energy,
            "dE_formula": self.dE_formula,
            "mass": self.mass,
            "stationarity": self.stationarity,
            "diffusion_quantiles": list(self.diffusion_quantiles),
            "converged": self.converged,
            "iterations": self.iterations,
            "entropy_offset": self.entropy_offset,
            "message": self.message,
            "nu_star": self.nu_star.to_dict(),
        }

    def with_lambda(self, lam: float) -> "ParisiSolution":
        """Same minimiser reassembled for another signal strength (min P does not depend on it)."""
        out = ParisiSolution(**{**self.__dict__})
        out.lam = lam
        out.energy = lam * self.q**2 + self.P_value
        return out


class ReducedProblem:
    """M(m) = min over Lambda of P for fixed (rho, q, beta, breaks)."""

    def __init__(self, rho, q, beta=None, config=None, breaks=None):
        self.rho = rho
        self.q = clamp_overlap(rho, q)
        self.beta = beta
        self.config = config or SolverConfig()
        self.breaks = uniform_breaks(rho, self.config.K) if breaks is None else np.asarray(breaks)
        self.p = target_slopes(rho, self.q)
        self.dsq = np.diff(self.breaks**2)
        self.evals = 0
        self._last = None

    def measure(self, m) -> OrderParameterMeasure:
        return OrderParameterMeasure(self.rho, m, self.breaks, 0.0, self.beta)

    def _root(self, sol: PDESolution, p: float, M: float) -> tuple[float, float, float]:
        sigma = 2.0 * np.sqrt(self.rho)
        centre = sigma * norm_ppf(p)
        lo, hi = centre - 4.0 * M - 0.25 * sigma, centre + 0.25 * sigma
        if self.beta is not None:
            lo -= 2.0 / self.beta
            hi += 2.0 / self.beta

        def g(L):
            return sol.evaluate([L])[1][0] - p

        for _ in range(20):
            if g(lo) < 0:
                break
            lo -= sigma
        for _ in range(20):
            if g(hi) > 0:
                break
            hi += sigma
        L = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
        u, ux = sol.evaluate([L])
        return L, float(u[0]), float(ux[0])

    def evaluate(self, m, need_grad=True):
        m = np.asarray(m, dtype=float)
        nu = self.measure(m)
        M = nu.absolutely_continuous_mass()
        span = query_span(self.rho, self.q, M)
        if self.beta is not None:
            span = (span[0] - 4.0 / self.beta, span[1] + 4.0 / self.beta)
        sol = PDESolution(nu, self.config, span=span)
        self.evals += 1
        L1, u1, s1 = self._root(sol, self.p[0], M)
        L2, u2, s2 = self._root(sol, self.p[1], M)
        rho, q = self.rho, self.q
        value = rho * u1 + (1 - rho) * u2 - L1 * q - L2 * (rho - q) - nu.linear_term()
        grad = None
        if need_grad:
            grad = sol.gradient_m([L1, L2], [rho, 1 - rho]) - self.dsq
        self._last = dict(m=m, L=(L1, L2), u=(u1, u2), slopes=(s1, s2), value=value,
                          sol=sol)
        return value, grad


def _initial_m(rho, K, beta):
    # a gentle ramp; the minimiser is unique so the start only affects speed
    t = uniform_breaks(rho, K)[:-1] / rho
    m = 0.5 * t / np.sqrt(rho)
    if beta is not None:
        m = np.minimum(m, 0.5 * beta)
    return m


def projected_gradient_residual(m, grad, upper=np.inf, step=1.0):
    """|| m - Proj(m - step * grad) || / step for the monotone cone in [0, upper]."""
    proj = project_isotonic(m - step * grad, 0.0, upper)
    return float(np.max(np.abs(m - proj)) / step)


def minimize(rho: float, q: float, lam: float = 0.0, beta: float | None = None,
             config: SolverConfig | None = None, m0=None, entropy_offset: bool = False,
             breaks=None) -> ParisiSolution:
    """Minimise the functional; returns E(q) = lam q^2 + min P with diagnostics.

    The step heights are optimised directly under the monotone-cone
    constraints with SLSQP.  Working in m rather than in increments keeps the
    problem well conditioned; the objective is scaled by 1 / mean(dt)^2 so
    that the quasi-Newton start is of the right size.
    """
    config = config or SolverConfig()
    prob = ReducedProblem(rho, q, beta, config, breaks)
    K = len(prob.breaks) - 1
    upper = np.inf if beta is None else float(beta)
    if m0 is None:
        m_init = _initial_m(rho, K, beta)
    else:
        m_init = project_isotonic(np.asarray(m0, dtype=float), 0.0, upper)
    scale = 1.0 / float(np.mean(np.diff(prob.breaks))) ** 2
    cache = {}

    def feasible(m):
        return project_isotonic(m, 0.0, upper)

    def fun(m):
        val, grad = prob.evaluate(feasible(m))
        cache["m"] = m.copy()
        return scale * val, scale * grad

    diff = np.eye(K) - np.eye(K, k=-1)
    cons = [dict(type="ineq", fun=lambda m: diff @ m, jac=lambda m: diff)]
    if beta is not None:
        top = np.zeros(K)
        top[-1] = -1.0
        cons.append(dict(type="ineq", fun=lambda m: upper - m[-1], jac=lambda m: top))
    res = optimize.minimize(fun, m_init, jac=True, method="SLSQP", constraints=cons,
                            options=dict(maxiter=config.max_iter, ftol=config.tol**2 * scale))
    m = feasible(res.x)
    value, gm = prob.evaluate(m)
    info = prob._last
    L1, L2 = info["L"]
    s1, s2 = info["slopes"]
    p1, p2 = prob.p
    residual = projected_gradient_residual(m, gm, upper, step=scale)
    stationarity = {
        "lambda1": abs(s1 - p1),
        "lambda2": abs(s2 - p2),
        "m_projected_gradient": residual,
    }
    converged = bool(max(stationarity["lambda1"], stationarity["lambda2"]) < 1e-8
                     and (res.success or res.status == 8))
    P_value = float(value)
    if entropy_offset and beta is not None:
        P_value += np.log(2.0) / beta
    sol = info["sol"]
    lo, hi = sol.slope_range()
    return ParisiSolution(
        rho=rho, q=prob.q, lam=lam, beta=beta,
        u1_00=info["u"][0], u2_00=info["u"][1],
        lambda_star=(L1, L2),
        nu_star=prob.measure(m),
        P_value=P_value,
        energy=lam * prob.q**2 + P_value,
        stationarity=stationarity,
        diffusion_quantiles=(s1, s2),
        converged=converged,
        iterations=int(res.nit),
        entropy_offset=entropy_offset,
        message=str(res.message),
        extra={"slope_min": lo, "slope_max": hi, "evals": prob.evals},
    )
