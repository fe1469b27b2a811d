"""Exhaustive enumeration over Sigma_N(rho_N) at small N.

Configurations are split by their overlap count a = <x, v>: a ones inside the
planted support S (size k) and k - a outside.  Writing A in blocks over
(S, S^c), the energies of all configurations in one overlap class are

    (x, A x) = E_1[s] + 2 X_1[s] A_12 X_2[t]^T + E_2[t]

for inside-subsets s and outside-subsets t, which is one matrix product per
class.  Everything downstream (profiles, partition functions, rate functions,
wells) is computed from these exact energy tables.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.special import gammaln, logsumexp

from .gray import revolving_door, swap_sequence, walk_energies
from .model import PlantedInstance

DEFAULT_BUDGET = 10**8


class BudgetExceeded(ValueError):
    pass


def log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def class_count(N: int, k: int, a: int) -> int:
    """|Sigma_N(rho_N, q_N)| with N rho_N = k and N q_N = a."""
    if a < 0 or a > k or k - a > N - k:
        return 0
    return math.comb(k, a) * math.comb(N - k, k - a)


def _subsets(n, r):
    if r == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations(range(n), r)), dtype=np.int64)


def _indicator(subsets, n):
    X = np.zeros((len(subsets), n))
    if subsets.shape[1]:
        rows = np.repeat(np.arange(len(subsets)), subsets.shape[1])
        X[rows, subsets.ravel()] = 1.0
    return X


@dataclass
class OverlapClass:
    a: int
    count: int
    energies: np.ndarray          # shape (C_inside, C_outside)
    inside: np.ndarray            # subsets of the support (local indices)
    outside: np.ndarray           # subsets of the complement (local indices)

    @property
    def max_energy(self) -> float:
        return float(self.energies.max())

    def argmax_support(self, S, Sc) -> np.ndarray:
        i, j = np.unravel_index(int(np.argmax(self.energies)), self.energies.shape)
        return np.sort(np.concatenate([S[self.inside[i]], Sc[self.outside[j]]]))

    def log_partition(self, beta: float) -> float:
        return float(logsumexp(beta * self.energies))


@dataclass
class Enumeration:
    """Exact energy tables of every overlap class of an instance."""

    inst: PlantedInstance
    classes: dict[int, OverlapClass]

    @property
    def N(self):
        return self.inst.N

    @property
    def k(self):
        return self.inst.k

    @property
    def feasible(self) -> list[int]:
        return sorted(self.classes)

    @property
    def total(self) -> int:
        return sum(c.count for c in self.classes.values())

    def support_sets(self):
        return self.inst.support, np.flatnonzero(self.inst.v == 0)

    def all_energies(self) -> tuple[np.ndarray, np.ndarray]:
        """(energies, overlap counts) for every configuration."""
        e = np.concatenate([c.energies.ravel() for c in self.classes.values()])
        a = np.concatenate([np.full(c.count, c.a) for c in self.classes.values()])
        return e, a

    def log_partition(self, beta: float) -> dict[int, float]:
        return {a: c.log_partition(beta) for a, c in self.classes.items()}


def enumerate_classes(inst: PlantedInstance, budget: int = DEFAULT_BUDGET) -> Enumeration:
    N, k = inst.N, inst.k
    total = math.comb(N, k)
    if total > budget:
        raise BudgetExceeded(f"C({N},{k}) = {total} exceeds the enumeration budget {budget}")
    S = inst.support
    Sc = np.flatnonzero(inst.v == 0)
    A = inst.A
    A11, A12, A22 = A[np.ix_(S, S)], A[np.ix_(S, Sc)], A[np.ix_(Sc, Sc)]
    classes = {}
    for a in range(max(0, 2 * k - N), k + 1):
        ins = _subsets(k, a)
        outs = _subsets(N - k, k - a)
        X1 = _indicator(ins, k)
        X2 = _indicator(outs, N - k)
        E1 = np.einsum("ij,jk,ik->i", X1, A11, X1)
        E2 = np.einsum("ij,jk,ik->i", X2, A22, X2)
        cross = (X1 @ A12) @ X2.T
        energies = E1[:, None] + 2.0 * cross + E2[None, :]
        classes[a] = OverlapClass(a, energies.size, energies, ins, outs)
    return Enumeration(inst, classes)


def direct_scan(inst: PlantedInstance, budget: int = 2 * 10**6) -> dict[int, tuple[int, float]]:
    """Second, independent pass: every k-subset, full (x, A x), grouped by overlap."""
    N, k = inst.N, inst.k
    if math.comb(N, k) > budget:
        raise BudgetExceeded("direct scan budget exceeded")
    out: dict[int, list] = {}
    v = inst.v
    for sup in itertools.combinations(range(N), k):
        idx = np.array(sup)
        e = float(inst.A[np.ix_(idx, idx)].sum())
        a = int(v[idx].sum())
        cnt, best = out.get(a, [0, -np.inf])
        out[a] = [cnt + 1, max(best, e)]
    return {a: (c, b) for a, (c, b) in out.items()}


def gray_walk(inst: PlantedInstance, budget: int = 2 * 10**6) -> tuple[np.ndarray, np.ndarray]:
    """Energies and overlaps of all of Sigma_N(rho_N) in revolving-door order."""
    N, k = inst.N, inst.k
    if math.comb(N, k) > budget:
        raise BudgetExceeded("gray walk budget exceeded")
    combos = revolving_door(N, k)
    outs, ins = swap_sequence(combos)
    return walk_energies(inst.A, combos[0], outs, ins, inst.v.astype(np.int64))


# ---------------------------------------------------------------------------
# profiles and free energies


@dataclass
class ConstrainedProfile:
    N: int
    k: int
    lam: float
    q_grid: np.ndarray            # feasible a / N
    counts: np.ndarray
    E_N: np.ndarray               # (1/N) max over the class of (x, A x)
    argmax: list                  # support of one maximiser per class
    mle_value: float              # (1/N) max over Sigma_N(rho_N)
    mle_support: np.ndarray

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "k": self.k,
            "lambda": self.lam,
            "q": self.q_grid.tolist(),
            "count": self.counts.tolist(),
            "E_N": self.E_N.tolist(),
            "argmax": [s.tolist() for s in self.argmax],
            "mle_value": self.mle_value,
            "mle_support": self.mle_support.tolist(),
        }


def _enum(inst_or_enum, budget=DEFAULT_BUDGET) -> Enumeration:
    if isinstance(inst_or_enum, Enumeration):
        return inst_or_enum
    return enumerate_classes(inst_or_enum, budget)


def enumerate_profile(inst, budget: int = DEFAULT_BUDGET) -> ConstrainedProfile:
    en = _enum(inst, budget)
    N, k = en.N, en.k
    S, Sc = en.support_sets()
    feas = en.feasible
    maxima = np.array([en.classes[a].max_energy for a in feas])
    best = int(np.argmax(maxima))
    argmax = [en.classes[a].argmax_support(S, Sc) for a in feas]
    return ConstrainedProfile(
        N=N, k=k, lam=en.inst.lam,
        q_grid=np.array(feas) / N,
        counts=np.array([en.classes[a].count for a in feas]),
        E_N=maxima / N,
        argmax=argmax,
        mle_value=float(maxima[best] / N),
        mle_support=argmax[best],
    )


def exact_mle(inst, budget: int = DEFAULT_BUDGET) -> tuple[float, np.ndarray]:
    """(max over Sigma_N(rho_N) of (x, A x), a maximising support)."""
    prof = enumerate_profile(inst, budget)
    return prof.mle_value * prof.N, prof.mle_support


def exact_free_energy(inst, beta: float, q: float | None = None,
                      budget: int = DEFAULT_BUDGET) -> float:
    """(1/N) log sum exp(beta (x, A x)) over Sigma_N(rho_N, q) (or all of Sigma_N(rho_N))."""
    en = _enum(inst, budget)
    if q is None:
        return float(logsumexp([c.log_partition(beta) for c in en.classes.values()])) / en.N
    a = int(round(q * en.N))
    if abs(a - q * en.N) > 1e-9 or a not in en.classes:
        raise ValueError(f"q={q} is not a feasible overlap at N={en.N}")
    return en.classes[a].log_partition(beta) / en.N


def sandwich_gap(inst, beta: float, budget: int = DEFAULT_BUDGET) -> dict[int, tuple[float, float]]:
    """Per class: (|(1/beta) F_N - max/N|, log|class| / (N beta))."""
    en = _enum(inst, budget)
    out = {}
    for a, c in en.classes.items():
        lhs = abs(c.log_partition(beta) / (en.N * beta) - c.max_energy / en.N)
        out[a] = (lhs, math.log(c.count) / (en.N * beta))
    return out


# ---------------------------------------------------------------------------
# rate functions and free-energy wells


@dataclass
class Well:
    a: float
    c: float
    b: float
    depth: float            # min(I(a), I(b)) - I(c), in the units of I (order N)
    depth_per_site: float   # depth / N

    def as_dict(self):
        return dict(a=self.a, c=self.c, b=self.b, depth=self.depth,
                    depth_per_site=self.depth_per_site)


@dataclass
class RateFunction:
    N: int
    beta: float
    epsilon: float
    centres: np.ndarray           # overlap values a (multiples of 1/N)
    values: np.ndarray            # I(a; epsilon), +inf for empty windows
    class_log_weight: dict = field(repr=False, default_factory=dict)

    def value(self, a: float) -> float:
        return window_rate(self, a)

    def wells(self, min_depth: float = 0.0) -> list[Well]:
        return find_wells(self, min_depth)


def window_members(N: int, centre: float, epsilon: float) -> range:
    """Lattice counts j with centre - eps <= j / N < centre + eps."""
    lo = math.ceil(N * (centre - epsilon) - 1e-9)
    hi = math.ceil(N * (centre + epsilon) - 1e-9)
    return range(lo, hi)


def window_rate(rate: RateFunction, centre: float) -> float:
    logs = [rate.class_log_weight[j] for j in window_members(rate.N, centre, rate.epsilon)
            if j in rate.class_log_weight]
    if not logs:
        return math.inf
    return float(-logsumexp(logs))


def rate_function(inst, beta: float, epsilon: float, budget: int = DEFAULT_BUDGET,
                  order: str = "natural") -> RateFunction:
    """I(a; eps) = -log pi_beta(<x,v>/N in [a - eps, a + eps)) on the overlap lattice.

    ``order="reversed"`` sums every class in the opposite order, a second pass
    used to check summation-order independence.
    """
    en = _enum(inst, budget)
    N = en.N
    per_class = {}
    for a, c in en.classes.items():
        e = beta * c.energies.ravel()
        if order == "reversed":
            e = e[::-1]
        per_class[a] = float(logsumexp(e))
    keys = sorted(per_class)
    if order == "reversed":
        keys = keys[::-1]
    logZ = float(logsumexp([per_class[a] for a in keys]))
    class_log_weight = {a: per_class[a] - logZ for a in per_class}
    centres = np.array(sorted(per_class)) / N
    rate = RateFunction(N, beta, epsilon, centres, np.empty(len(centres)), class_log_weight)
    rate.values = np.array([window_rate(rate, a) for a in centres])
    return rate


def find_wells(rate: RateFunction, min_depth: float = 0.0) -> list[Well]:
    """For every pair a < b of lattice centres, the deepest c between them.

    Windows [x - eps, x + eps) of a, b, c must be pairwise disjoint, i.e. the
    centres at least 2 eps apart.  Only wells with depth > min_depth are kept.
    """
    N, eps = rate.N, rate.epsilon
    xs = rate.centres
    I = rate.values
    sep = 2.0 * eps - 1e-12
    wells = []
    for ia in range(len(xs)):
        for ib in range(ia + 1, len(xs)):
            a, b = xs[ia], xs[ib]
            if b - a < 2 * sep:
                continue
            inner = [ic for ic in range(ia + 1, ib) if xs[ic] - a >= sep and b - xs[ic] >= sep]
            if not inner:
                continue
            ic = min(inner, key=lambda j: I[j])
            if not np.isfinite(I[ic]):
                continue
            depth = min(I[ia], I[ib]) - I[ic]
            if depth > min_depth:
                wells.append(Well(float(a), float(xs[ic]), float(b), float(depth), float(depth / N)))
    return wells


# ---------------------------------------------------------------------------
# exact exit statistics of the Metropolis swap chain


@dataclass
class StateSpace:
    codes: np.ndarray        # sorted bitmask codes
    energies: np.ndarray
    overlaps: np.ndarray     # counts <x, v>
    N: int
    k: int


def state_space(inst: PlantedInstance, max_states: int = 50_000) -> StateSpace:
    N, k = inst.N, inst.k
    if math.comb(N, k) > max_states:
        raise BudgetExceeded(f"{math.comb(N, k)} states exceed the limit {max_states}")
    sup = np.array(list(itertools.combinations(range(N), k)), dtype=np.int64)
    codes = (np.int64(1) << sup).sum(axis=1)
    order = np.argsort(codes)
    sup, codes = sup[order], codes[order]
    X = _indicator(sup, N)
    energies = np.einsum("ij,jk,ik->i", X, inst.A, X)
    overlaps = X @ inst.v.astype(float)
    return StateSpace(codes, energies, overlaps.round().astype(np.int64), N, k)


def transition_matrix(inst: PlantedInstance, beta: float, space: StateSpace | None = None):
    """Metropolis kernel over uniform (i in ones, j in zeros) proposals, as CSR."""
    space = space or state_space(inst)
    N, k = space.N, space.k
    n = len(space.codes)
    bits = ((space.codes[:, None] >> np.arange(N)) & 1).astype(bool)
    ones = np.array([np.flatnonzero(r) for r in bits])
    zeros = np.array([np.flatnonzero(~r) for r in bits])
    nbr = (space.codes[:, None, None] ^ (np.int64(1) << ones[:, :, None])
           ^ (np.int64(1) << zeros[:, None, :])).reshape(n, -1)
    cols = np.searchsorted(space.codes, nbr)
    delta = space.energies[cols] - space.energies[:, None]
    acc = np.minimum(1.0, np.exp(np.minimum(beta * delta, 0.0))) / (k * (N - k))
    rows = np.repeat(np.arange(n), nbr.shape[1])
    Q = sparse.csr_matrix((acc.ravel(), (rows, cols.ravel())), shape=(n, n))
    stay = 1.0 - np.asarray(Q.sum(axis=1)).ravel()
    Q = Q + sparse.diags(stay)
    return Q.tocsr(), space


def stationary_law(space: StateSpace, beta: float) -> np.ndarray:
    w = beta * space.energies
    p = np.exp(w - w.max())
    return p / p.sum()


@dataclass
class ExitStatistics:
    interval: tuple[float, float]
    n_inside: int
    expected: float                  # E tau under pi_beta( . | I); inf if exit impossible
    infinite: bool
    T: np.ndarray
    prob_exit_by: np.ndarray         # P(tau <= T) for each T

    def as_dict(self):
        return dict(interval=list(self.interval), n_inside=self.n_inside,
                    expected=self.expected, infinite=self.infinite,
                    T=self.T.tolist(), prob_exit_by=self.prob_exit_by.tolist())


def exact_exit_statistics(inst: PlantedInstance, beta: float, interval, T=(1, 10, 100, 1000),
                          max_states: int = 50_000, chain=None) -> ExitStatistics:
    """Exit time from {x : a <= <x,v>/N <= b} started from pi_beta( . | I).

    E tau = pi~^T (I - Q_II)^{-1} 1 and P(tau <= T) = 1 - pi~^T Q_II^T 1, with
    Q the Metropolis kernel restricted to the interval.
    """
    a, b = interval
    Q, space = chain if chain is not None else transition_matrix(
        inst, beta, state_space(inst, max_states))
    N = space.N
    m = space.overlaps / N
    inside = (m >= a - 1e-12) & (m <= b + 1e-12)
    T = np.atleast_1d(np.asarray(T, dtype=np.int64))
    if not inside.any():
        raise ValueError("interval contains no reachable overlap")
    pi = stationary_law(space, beta)
    p0 = pi[inside] / pi[inside].sum()
    if inside.all():
        return ExitStatistics((a, b), int(inside.sum()), math.inf, True, T, np.zeros(len(T)))
    Qii = Q[inside][:, inside].tocsc()
    n_in = Qii.shape[0]
    lu = splinalg.splu((sparse.identity(n_in, format="csc") - Qii).tocsc())
    h = lu.solve(np.ones(n_in))
    expected = float(p0 @ h)
    Qt = Qii.T.tocsr()
    probs = np.empty(len(T))
    order = np.argsort(T)
    p = p0.copy()
    t_now = 0
    for idx in order:
        while t_now < T[idx]:
            p = Qt @ p
            t_now += 1
        probs[idx] = 1.0 - p.sum()
    return ExitStatistics((a, b), n_in, expected, False, T, np.clip(probs, 0.0, 1.0))
