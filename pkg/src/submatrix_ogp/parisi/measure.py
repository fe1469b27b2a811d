"""Discretized order-parameter measures.

Zero temperature: nu = m(s) ds + c delta_rho with m a nondecreasing step
function on the breakpoints ``t_0 = 0 < ... < t_K = rho``.

Finite beta: mu is a probability measure on [0, rho] with atoms on the
breakpoints; the PDE sees m(s) = beta * mu([0, s]) on each interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ZERO_TEMP = "zero-temp"
FINITE_BETA = "finite-beta"


def uniform_breaks(rho: float, K: int) -> np.ndarray:
    return np.linspace(0.0, rho, K + 1)


def project_isotonic(values, lower: float = 0.0, upper: float = np.inf, weights=None) -> np.ndarray:
    """Euclidean projection onto {lower <= x_0 <= ... <= x_{K-1} <= upper}.

    Pool-adjacent-violators followed by clipping, which is exact for a box
    intersected with the monotone cone.
    """
    y = np.asarray(values, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wsum: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wsum.append(wi)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w_tot = wsum[-2] + wsum[-1]
            merged = (means[-2] * wsum[-2] + means[-1] * wsum[-1]) / w_tot
            c = counts[-2] + counts[-1]
            means[-2:] = [merged]
            wsum[-2:] = [w_tot]
            counts[-2:] = [c]
    out = np.repeat(means, counts)
    return np.clip(out, lower, upper)


@dataclass
class OrderParameterMeasure:
    rho: float
    m_values: np.ndarray
    breaks: np.ndarray
    atom_c: float = 0.0
    beta: float | None = None
    mode: str = field(init=False)

    def __post_init__(self):
        self.m_values = np.asarray(self.m_values, dtype=float).copy()
        self.breaks = np.asarray(self.breaks, dtype=float).copy()
        self.mode = ZERO_TEMP if self.beta is None else FINITE_BETA
        self.validate()

    # construction -----------------------------------------------------------

    @classmethod
    def zero(cls, rho: float, K: int = 32) -> "OrderParameterMeasure":
        return cls(rho, np.zeros(K), uniform_breaks(rho, K))

    @classmethod
    def zero_temp(cls, rho, m_values, c=0.0, breaks=None) -> "OrderParameterMeasure":
        m_values = np.asarray(m_values, dtype=float)
        if breaks is None:
            breaks = uniform_breaks(rho, len(m_values))
        return cls(rho, m_values, breaks, atom_c=float(c))

    @classmethod
    def finite_beta(cls, rho, beta, cdf_values, breaks=None) -> "OrderParameterMeasure":
        """``cdf_values[k] = mu([0, t_k])`` for the interval [t_k, t_{k+1})."""
        cdf_values = np.asarray(cdf_values, dtype=float)
        if breaks is None:
            breaks = uniform_breaks(rho, len(cdf_values))
        return cls(rho, beta * cdf_values, breaks, beta=float(beta))

    @classmethod
    def from_atoms(cls, rho, beta, atoms, weights, K: int = 32) -> "OrderParameterMeasure":
        """Finite-beta measure with point masses ``weights`` at ``atoms``.

        Breakpoints are the uniform K-grid refined by the atom locations.
        """
        atoms = np.asarray(atoms, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("atom weights must be a probability vector")
        if np.any(atoms < 0) or np.any(atoms > rho):
            raise ValueError("atoms must lie in [0, rho]")
        breaks = np.union1d(uniform_breaks(rho, K), atoms)
        cdf = np.array([weights[atoms <= t + 1e-15].sum() for t in breaks[:-1]])
        return cls.finite_beta(rho, beta, np.minimum(cdf, 1.0), breaks)

    # derived quantities -------------------------------------------------------

    @property
    def K(self) -> int:
        return len(self.m_values)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breaks)

    def mass(self) -> float:
        """Total variation ||nu|| = int m + c."""
        return float(self.m_values @ self.widths) + self.atom_c

    def absolutely_continuous_mass(self) -> float:
        return float(self.m_values @ self.widths)

    def linear_term(self) -> float:
        """2 * int s dnu(s), the term subtracted in the functional."""
        sq = np.diff(self.breaks**2)
        return float(self.m_values @ sq) + 2.0 * self.atom_c * self.rho

    def reduced(self) -> "OrderParameterMeasure":
        """Same measure with the atom at rho removed."""
        return OrderParameterMeasure(self.rho, self.m_values, self.breaks, 0.0, self.beta)

    def cdf_values(self) -> np.ndarray:
        if self.beta is None:
            raise ValueError("cdf only defined at finite beta")
        return self.m_values / self.beta

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "rho": self.rho,
            "beta": self.beta,
            "breaks": self.breaks.tolist(),
            "m_values": self.m_values.tolist(),
            "atom_c": self.atom_c,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrderParameterMeasure":
        return cls(d["rho"], d["m_values"], d["breaks"], d.get("atom_c", 0.0), d.get("beta"))

    def validate(self) -> None:
        rho, t, m = self.rho, self.breaks, self.m_values
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {rho}")
        if len(t) != len(m) + 1:
            raise ValueError("need len(breaks) == len(m_values) + 1")
        if t[0] != 0.0 or abs(t[-1] - rho) > 1e-14 or np.any(np.diff(t) <= 0):
            raise ValueError("breaks must increase strictly from 0 to rho")
        if np.any(m < 0):
            raise ValueError("m must be nonnegative")
        if np.any(np.diff(m) < -1e-12 * max(1.0, float(np.max(m)))):
            raise ValueError("m must be nondecreasing")
        if self.atom_c < 0:
            raise ValueError("atom mass must be nonnegative")
        if self.beta is not None:
            if self.beta <= 0:
                raise ValueError("beta must be positive")
            if self.atom_c != 0.0:
                raise ValueError("finite-beta measures carry no separate atom")
            if np.any(m > self.beta * (1.0 + 1e-12)):
                raise ValueError("beta * mu([0, s]) cannot exceed beta")
