"""Metropolis swap chain on Sigma_N(rho_N) targeting pi_beta ~ exp(beta (x, A x)).

One step proposes a uniform pair (i, j) with x_i = 1, x_j = 0 and accepts the
swap x -> x - e_i + e_j with probability min(1, exp(beta * delta)).  Random
numbers are drawn in fixed-size blocks from the seeded Philox generator, so a
trajectory is a deterministic function of (instance, config).  The inner loop
is compiled with numba and keeps the row sums A x in sync incrementally; the
caches are rebuilt from scratch at every block boundary.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from . import oracle
from .model import (Configuration, PlantedInstance, configuration, make_rng, planted_configuration,
                    random_configuration, resync)

BLOCK = 100_000
REFLECT = 1
STOP_ON_EXIT = 2
RECORD_CODES = 4
TRACK_BEST = 8

# slots of the integer state vector
_OV, _T, _ACC, _EXIT, _CODE, _NREC, _TARGET = range(7)


@numba.njit(cache=True)
def _kernel(A, v, ones, zeros, r, fs, ints, ia, ib, u, betas, lo, hi, mode, stride,
            rec_m, rec_e, rec_best, codes, best_bits):
    """Run len(u) proposals (or fewer when stopping early); returns the count executed."""
    N = A.shape[0]
    n = len(u)
    per_step_beta = len(betas) > 1
    reflect = (mode & 1) != 0
    stop_exit = (mode & 2) != 0
    rec_code = (mode & 4) != 0
    track = (mode & 8) != 0
    for s in range(n):
        beta = betas[s] if per_step_beta else betas[0]
        a = ia[s]
        b = ib[s]
        i = ones[a]
        j = zeros[b]
        delta = 2.0 * (r[j] - r[i]) + A[i, i] + A[j, j] - 2.0 * A[i, j]
        new_ov = ints[_OV] + v[j] - v[i]
        ok = True
        if reflect and (new_ov < lo or new_ov > hi):
            ok = False
        if ok and beta * delta < 0.0:
            ok = u[s] < math.exp(beta * delta)
        if ok:
            ones[a] = j
            zeros[b] = i
            for l in range(N):
                r[l] += A[l, j] - A[l, i]
            fs[0] += delta
            ints[_OV] = new_ov
            ints[_ACC] += 1
            if N <= 62:
                ints[_CODE] = ints[_CODE] ^ (np.int64(1) << i) ^ (np.int64(1) << j)
            if track and fs[0] > fs[1]:
                fs[1] = fs[0]
                for l in range(len(ones)):
                    best_bits[l] = ones[l]
        ints[_T] += 1
        if rec_code:
            codes[s] = ints[_CODE]
        if ints[_T] % stride == 0:
            k = ints[_NREC]
            if k < len(rec_m):
                rec_m[k] = ints[_OV]
                rec_e[k] = fs[0]
                rec_best[k] = fs[1]
                ints[_NREC] = k + 1
        if stop_exit and ints[_EXIT] < 0 and (ints[_OV] < lo or ints[_OV] > hi):
            ints[_EXIT] = ints[_T]
            return s + 1
        if ints[_TARGET] > 0 and ints[_ACC] >= ints[_TARGET]:
            return s + 1
    return n


@dataclass
class ChainConfig:
    beta: float = 1.0
    steps: int = 10_000
    burn_in: int = 0
    record_stride: int = 1
    init: str = "uniform"                 # uniform | planted | conditioned
    interval: tuple[float, float] | None = None
    arm_exit: bool = False
    seed: int = 0

    def validate(self, rho: float | None = None):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.steps < 0 or self.burn_in < 0:
            raise ValueError("steps and burn_in must be nonnegative")
        if self.record_stride < 1 or self.steps % self.record_stride:
            raise ValueError("record_stride must divide steps")
        if self.init not in ("uniform", "planted", "conditioned"):
            raise ValueError(f"unknown init {self.init!r}")
        if (self.init == "conditioned" or self.arm_exit) and self.interval is None:
            raise ValueError("conditioned init and exit arming need an interval")
        if self.interval is not None:
            a, b = self.interval
            if a > b or a < 0 or (rho is not None and b > rho + 1e-12):
                raise ValueError(f"interval {self.interval} must lie in [0, rho]")
        return self

    def to_dict(self):
        d = asdict(self)
        d["interval"] = list(self.interval) if self.interval is not None else None
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown chain config fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("interval") is not None:
            d["interval"] = tuple(d["interval"])
        return cls(**d)


@dataclass
class Trajectory:
    N: int
    stride: int
    overlaps: np.ndarray          # <X_t, v> / N at t = stride, 2 stride, ...
    energies: np.ndarray          # (X_t, A X_t) at the same times
    best_energies: np.ndarray     # best energy seen up to each recorded time
    steps: int
    accepted: int
    exit_time: float              # first t with overlap outside the interval; inf if none
    final: Configuration
    max_drift: float              # largest cache correction applied at resyncs
    seed: int
    best: Configuration | None = None   # best configuration seen after burn-in

    @property
    def acceptance(self) -> float:
        return self.accepted / self.steps if self.steps else math.nan

    def summary(self) -> dict:
        return dict(seed=self.seed, steps=self.steps, acceptance=self.acceptance,
                    exit_time=self.exit_time,
                    mean_overlap=float(self.overlaps.mean()) if len(self.overlaps) else math.nan,
                    final_energy=self.final.cached_energy, max_drift=self.max_drift)


def _interval_counts(N: int, interval) -> tuple[int, int]:
    """Integer overlap counts lo..hi with lo/N >= a and hi/N <= b (closed)."""
    if interval is None:
        return -1, N + 1
    a, b = interval
    return math.ceil(a * N - 1e-9), math.floor(b * N + 1e-9)


class Chain:
    """Mutable chain state: configuration, index lists and cached row sums."""

    def __init__(self, inst: PlantedInstance, x: Configuration, rng: np.random.Generator):
        self.inst = inst
        self.x = x
        self.rng = rng
        self.A = np.ascontiguousarray(inst.A, dtype=np.float64)
        self.v = inst.v.astype(np.int64)
        self.ones = x.ones.astype(np.int64)
        self.zeros = x.zeros.astype(np.int64)
        self.r = x.row_sums.copy()
        self.fs = np.array([x.cached_energy, x.cached_energy])
        code = int(sum(1 << int(i) for i in self.ones)) if inst.N <= 62 else 0
        self.ints = np.array([x.cached_overlap, 0, 0, -1, code, 0, 0], dtype=np.int64)
        self.best_bits = self.ones.copy()
        self.max_drift = 0.0

    @property
    def t(self) -> int:
        return int(self.ints[_T])

    @property
    def energy(self) -> float:
        return float(self.fs[0])

    @property
    def overlap_count(self) -> int:
        return int(self.ints[_OV])

    def configuration(self) -> Configuration:
        bits = np.zeros(self.inst.N, dtype=np.int8)
        bits[self.ones] = 1
        return Configuration(bits, float(self.fs[0]), int(self.ints[_OV]), self.r.copy())

    def best_configuration(self) -> Configuration:
        return configuration(self.inst, np.sort(self.best_bits))

    def resync(self) -> float:
        x = self.configuration()
        drift = abs(resync(self.inst, x))
        self.r = x.row_sums
        self.fs[0] = x.cached_energy
        self.max_drift = max(self.max_drift, drift / max(1.0, abs(x.cached_energy)))
        return drift

    def advance(self, n: int, beta, lo=-1, hi=None, mode=0, stride=1, record=None,
                codes=None, accept_target=0) -> int:
        """Run up to n proposals in one block; returns the number executed."""
        k, nz = len(self.ones), len(self.zeros)
        ia = self.rng.integers(0, k, size=n)
        ib = self.rng.integers(0, nz, size=n)
        u = self.rng.random(n)
        betas = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        if len(betas) not in (1, n):
            raise ValueError("beta schedule length must match the block")
        if hi is None:
            hi = self.inst.N + 1
        if record is None:
            record = (np.empty(0, np.int64), np.empty(0), np.empty(0))
        if codes is None:
            codes = np.empty(0, np.int64)
        elif self.inst.N > 62:
            raise ValueError("state codes need N <= 62")
        self.ints[_TARGET] = accept_target
        done = _kernel(self.A, self.v, self.ones, self.zeros, self.r, self.fs, self.ints,
                       ia, ib, u, betas, int(lo), int(hi), int(mode), int(stride),
                       record[0], record[1], record[2], codes, self.best_bits)
        self.ints[_TARGET] = 0
        return int(done)


def step(chain: Chain, beta: float) -> bool:
    """One Metropolis proposal; returns whether it was accepted."""
    before = int(chain.ints[_ACC])
    chain.advance(1, beta)
    return int(chain.ints[_ACC]) > before


def _bits_from_code(N: int, code: int) -> np.ndarray:
    return np.array([(code >> i) & 1 for i in range(N)], dtype=np.int8)


class ConditionedSampler:
    """Draws initial states from pi_beta( . | overlap in I).

    When Sigma_N(rho_N) is small enough to enumerate the law is sampled exactly;
    otherwise a state in I is built directly and then relaxed by a reflected
    chain (moves leaving I are rejected) for 50 N accepted moves.
    """

    def __init__(self, inst: PlantedInstance, beta: float, interval, exact_limit: int = 50_000):
        self.inst, self.beta = inst, float(beta)
        self.lo, self.hi = _interval_counts(inst.N, interval)
        k, N = inst.k, inst.N
        feasible = [a for a in range(max(0, 2 * k - N), k + 1) if self.lo <= a <= self.hi]
        if not feasible:
            raise ValueError(f"interval {interval} contains no reachable overlap")
        self.feasible = feasible
        self.exact = math.comb(N, k) <= exact_limit and N <= 62
        if self.exact:
            space = oracle.state_space(inst, exact_limit)
            mask = (space.overlaps >= self.lo) & (space.overlaps <= self.hi)
            w = self.beta * space.energies[mask]
            p = np.exp(w - w.max())
            self.codes = space.codes[mask]
            self.p = p / p.sum()

    def draw(self, rng: np.random.Generator) -> Configuration:
        inst = self.inst
        if self.exact:
            code = int(self.codes[rng.choice(len(self.codes), p=self.p)])
            return configuration(inst, np.flatnonzero(_bits_from_code(inst.N, code)))
        target = inst.k * inst.k / inst.N
        a = min(self.feasible, key=lambda c: abs(c - target))
        S = inst.support
        Sc = np.flatnonzero(inst.v == 0)
        sup = np.concatenate([rng.choice(S, a, replace=False), rng.choice(Sc, inst.k - a, replace=False)])
        x = configuration(inst, np.sort(sup))
        ch = Chain(inst, x, rng)
        need = 50 * inst.N
        while ch.ints[_ACC] < need:
            ch.advance(BLOCK, self.beta, self.lo, self.hi, mode=REFLECT, accept_target=need)
            ch.resync()
        return ch.configuration()


def initial_state(inst: PlantedInstance, config: ChainConfig, rng) -> Configuration:
    if config.init == "planted":
        return planted_configuration(inst)
    if config.init == "conditioned":
        return ConditionedSampler(inst, config.beta, config.interval).draw(rng)
    return random_configuration(inst, rng)


def run(inst: PlantedInstance, config: ChainConfig, beta_schedule=None,
        x0: Configuration | None = None) -> Trajectory:
    """Burn in, then run ``config.steps`` proposals with instrumentation.

    ``beta_schedule`` (length ``steps``) overrides the constant beta after burn-in.
    Exit times count proposals after burn-in; with the interval covering every
    reachable overlap the exit time is the inf sentinel.
    """
    config.validate(inst.rho_N)
    rng = make_rng(config.seed)
    x = x0.copy() if x0 is not None else initial_state(inst, config, rng)
    ch = Chain(inst, x, rng)
    lo, hi = _interval_counts(inst.N, config.interval)
    done = 0
    while done < config.burn_in:
        done += ch.advance(min(BLOCK, config.burn_in - done), config.beta)
        ch.resync()
    ch.ints[_T] = 0
    ch.ints[_ACC] = 0
    ch.fs[1] = ch.fs[0]
    ch.best_bits[:] = ch.ones
    n_rec = config.steps // config.record_stride
    rec = (np.empty(n_rec, np.int64), np.empty(n_rec), np.empty(n_rec))
    mode = TRACK_BEST | (STOP_ON_EXIT if config.arm_exit else 0)
    if config.arm_exit and lo <= max(0, 2 * inst.k - inst.N) and hi >= inst.k:
        mode &= ~STOP_ON_EXIT
    if config.arm_exit and not (lo <= ch.overlap_count <= hi):
        ch.ints[_EXIT] = 0
        mode &= ~STOP_ON_EXIT
    done = 0
    while done < config.steps:
        n = min(BLOCK, config.steps - done)
        betas = config.beta if beta_schedule is None else beta_schedule[done:done + n]
        got = ch.advance(n, betas, lo, hi, mode=mode, stride=config.record_stride, record=rec)
        done += got
        ch.resync()
        if got < n:
            break
    k = int(ch.ints[_NREC])
    exit_time = float(ch.ints[_EXIT]) if ch.ints[_EXIT] >= 0 else math.inf
    return Trajectory(inst.N, config.record_stride, rec[0][:k] / inst.N, rec[1][:k], rec[2][:k],
                      int(ch.ints[_T]), int(ch.ints[_ACC]), exit_time, ch.configuration(),
                      ch.max_drift, config.seed, ch.best_configuration())


# ---------------------------------------------------------------------------
# experiments built on the chain


def replica_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def exit_times(inst: PlantedInstance, beta: float, interval, n_replicas: int, seed: int,
               max_steps: int = 10**8) -> np.ndarray:
    """Exit times of independent replicas started from pi_beta( . | I); inf if not exited."""
    lo, hi = _interval_counts(inst.N, interval)
    if lo <= max(0, 2 * inst.k - inst.N) and hi >= inst.k:
        return np.full(n_replicas, math.inf)
    sampler = ConditionedSampler(inst, beta, interval)
    out = np.empty(n_replicas)
    for r, s in enumerate(replica_seeds(seed, n_replicas)):
        rng = make_rng(s)
        ch = Chain(inst, sampler.draw(rng), rng)
        block = 1024
        while ch.ints[_EXIT] < 0 and ch.t < max_steps:
            ch.advance(min(block, max_steps - ch.t), beta, lo, hi, mode=STOP_ON_EXIT)
            block = min(2 * block, BLOCK)
        out[r] = float(ch.ints[_EXIT]) if ch.ints[_EXIT] >= 0 else math.inf
    return out


def visit_counts(inst: PlantedInstance, beta: float, steps: int, seed: int,
                 burn_in: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """(state codes, visit counts) of one long chain, for enumerable N."""
    space = oracle.state_space(inst)
    rng = make_rng(seed)
    ch = Chain(inst, random_configuration(inst, rng), rng)
    ch.advance(burn_in, beta)
    counts = np.zeros(len(space.codes), dtype=np.int64)
    done = 0
    while done < steps:
        n = min(BLOCK, steps - done)
        codes = np.empty(n, np.int64)
        ch.advance(n, beta, mode=RECORD_CODES, codes=codes)
        counts += np.bincount(np.searchsorted(space.codes, codes), minlength=len(counts))
        ch.resync()
        done += n
    return space.codes, counts


def transition_counts(inst: PlantedInstance, beta: float, steps: int, seed: int):
    """Visit counts and off-diagonal transition counts {(from, to): n} of one chain."""
    space = oracle.state_space(inst)
    rng = make_rng(seed)
    ch = Chain(inst, random_configuration(inst, rng), rng)
    ch.advance(10_000, beta)
    prev = np.array([ch.ints[_CODE]], dtype=np.int64)
    visits = np.zeros(len(space.codes), dtype=np.int64)
    pairs: dict[tuple[int, int], int] = {}
    done = 0
    while done < steps:
        n = min(BLOCK, steps - done)
        codes = np.empty(n, np.int64)
        ch.advance(n, beta, mode=RECORD_CODES, codes=codes)
        seq = np.concatenate([prev, codes])
        visits += np.bincount(np.searchsorted(space.codes, seq[:-1]), minlength=len(visits))
        moved = seq[1:] != seq[:-1]
        src = np.searchsorted(space.codes, seq[:-1][moved])
        dst = np.searchsorted(space.codes, seq[1:][moved])
        keys, cnt = np.unique(src * len(space.codes) + dst, return_counts=True)
        for key, c in zip(keys.tolist(), cnt.tolist()):
            pair = divmod(key, len(space.codes))
            pairs[pair] = pairs.get(pair, 0) + c
        prev = codes[-1:]
        done += n
    return space, visits, pairs


@dataclass
class EmpiricalRate:
    N: int
    beta: float
    epsilon: float
    centres: np.ndarray
    values: np.ndarray            # -log of the window frequency
    hits: np.ndarray              # samples falling in each window
    lower_bound: np.ndarray       # True where hits < min_hits (value is only a lower bound)
    n_samples: int = 0
    extra: dict = field(default_factory=dict)


def well_profile(inst: PlantedInstance, beta: float, epsilon: float, steps: int = 2_000_000,
                 n_replicas: int = 4, seed: int = 0, min_hits: int = 100) -> EmpiricalRate:
    """Empirical I(a; eps) = -log(fraction of samples with overlap in [a - eps, a + eps)).

    Samples are every state of ``n_replicas`` chains (uniform starts, 10 N log N
    burn-in each).  Windows with fewer than ``min_hits`` samples are flagged as
    lower bounds; empty windows get -log(1 / n_samples) as that bound.
    """
    N, k = inst.N, inst.k
    counts = np.zeros(k + 1, dtype=np.int64)
    per = steps // n_replicas
    burn = int(10 * N * max(1.0, math.log(N)))
    for s in replica_seeds(seed, n_replicas):
        traj = run(inst, ChainConfig(beta=beta, steps=per, burn_in=burn, record_stride=1, seed=s))
        ov = np.rint(traj.overlaps * N).astype(np.int64)
        counts += np.bincount(ov, minlength=k + 1)
    total = int(counts.sum())
    centres = np.arange(max(0, 2 * k - N), k + 1)
    hits = np.array([sum(counts[j] for j in oracle.window_members(N, c / N, epsilon) if 0 <= j <= k)
                     for c in centres])
    with np.errstate(divide="ignore"):
        values = -np.log(np.maximum(hits, 1) / total)
    return EmpiricalRate(N, beta, epsilon, centres / N, values, hits, hits < min_hits, total)
