"""Planted-submatrix instances, constrained configurations and their energies.

The observation is A = (lambda / N) v v^T + W with W from the GOE
(off-diagonal variance 1/N, diagonal variance 2/N) and v the indicator of a
support of size N rho_N.  Configurations live in Sigma_N(rho_N), the boolean
vectors with exactly N rho_N ones.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


def _exact(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10**9)


def support_size(N: int, rho: float) -> int:
    """N rho_N = ceil(N rho - 1/2), so that N rho lies in (N rho_N - 1/2, N rho_N + 1/2]."""
    return math.ceil(N * _exact(rho) - Fraction(1, 2))


def overlap_count(N: int, q: float) -> int:
    """N q_N = floor(N q + 1/2), so that N q lies in [N q_N - 1/2, N q_N + 1/2)."""
    return math.floor(N * _exact(q) + Fraction(1, 2))


@dataclass
class AdmissibleGrid:
    """Targets (rho, q) and their integerizations at a given N."""

    rho: float
    q_values: list[float]

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        for q in self.q_values:
            if not 0.0 <= q <= self.rho:
                raise ValueError(f"q={q} outside [0, rho]")

    def integerize(self, N: int) -> tuple[int, list[int]]:
        k = support_size(N, self.rho)
        return k, [min(overlap_count(N, q), k) for q in self.q_values]

    def rho_N(self, N: int) -> float:
        return support_size(N, self.rho) / N

    def q_N(self, N: int) -> list[float]:
        return [c / N for c in self.integerize(N)[1]]


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    N: int
    rho: float
    lam: float
    seed: int
    v: np.ndarray
    A: np.ndarray
    W: np.ndarray
    shuffled: bool = False

    @property
    def k(self) -> int:
        return int(self.v.sum())

    @property
    def rho_N(self) -> float:
        return self.k / self.N

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.v)

    def with_noise(self, W: np.ndarray) -> "PlantedInstance":
        """Same planting and lambda with a different noise matrix (W=0 for signal-only checks)."""
        W = np.asarray(W, dtype=float)
        A = (self.lam / self.N) * np.outer(self.v, self.v) + W
        return PlantedInstance(self.N, self.rho, self.lam, self.seed, self.v, A, W, self.shuffled)


def goe(N: int, rng: np.random.Generator) -> np.ndarray:
    """GOE sample: (G + G^T) / sqrt(2N) has variance 1/N off and 2/N on the diagonal."""
    G = rng.standard_normal((N, N))
    return (G + G.T) / math.sqrt(2.0 * N)


def generate(N: int, rho: float, lam: float, seed: int, shuffle: bool = False) -> PlantedInstance:
    if N < 2:
        raise ValueError("N must be at least 2")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    k = support_size(N, rho)
    if k <= 0 or k >= N:
        raise ValueError(f"degenerate planting: N rho_N = {k} for N={N}, rho={rho}")
    rng = make_rng(seed)
    W = goe(N, rng)
    v = np.zeros(N, dtype=np.int8)
    if shuffle:
        v[rng.permutation(N)[:k]] = 1
    else:
        v[:k] = 1
    A = (lam / N) * np.outer(v, v).astype(float) + W
    return PlantedInstance(N, float(rho), float(lam), int(seed), v, A, W, shuffle)


# ---------------------------------------------------------------------------
# configurations


@dataclass(eq=False)
class Configuration:
    """A point of Sigma_N(rho_N) with cached (x, Ax), <x, v> and A x."""

    bits: np.ndarray
    cached_energy: float
    cached_overlap: int
    row_sums: np.ndarray = field(repr=False)

    @property
    def ones(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @property
    def zeros(self) -> np.ndarray:
        return np.flatnonzero(self.bits == 0)

    @property
    def N(self) -> int:
        return len(self.bits)

    def copy(self) -> "Configuration":
        return Configuration(self.bits.copy(), self.cached_energy, self.cached_overlap,
                             self.row_sums.copy())

    def support_key(self) -> int:
        """Integer bitmask of the support (bit i set iff x_i = 1)."""
        return int(sum(1 << int(i) for i in self.ones))


def configuration(inst: PlantedInstance, support) -> Configuration:
    """Build a configuration from a support index list; enforces |support| = N rho_N."""
    bits = np.zeros(inst.N, dtype=np.int8)
    idx = np.asarray(support, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= inst.N):
        raise ValueError("support index out of range")
    bits[idx] = 1
    if bits.sum() != inst.k or len(np.unique(idx)) != len(idx):
        raise ValueError(f"support must have exactly {inst.k} distinct indices")
    return _from_bits(inst, bits)


def from_bits(inst: PlantedInstance, bits) -> Configuration:
    bits = np.asarray(bits).astype(np.int8)
    if bits.shape != (inst.N,):
        raise ValueError(f"dimension mismatch: {bits.shape} vs N={inst.N}")
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0/1")
    if bits.sum() != inst.k:
        raise ValueError(f"configuration must have exactly {inst.k} ones, has {int(bits.sum())}")
    return _from_bits(inst, bits)


def _count(bits, v) -> int:
    """<x, v> in 64-bit integers (int8 products would overflow)."""
    return int(np.dot(bits.astype(np.int64), v.astype(np.int64)))


def _from_bits(inst, bits):
    x = bits.astype(float)
    r = inst.A @ x
    return Configuration(bits, float(x @ r), _count(bits, inst.v), r)


def random_configuration(inst: PlantedInstance, rng: np.random.Generator) -> Configuration:
    return configuration(inst, np.sort(rng.permutation(inst.N)[:inst.k]))


def planted_configuration(inst: PlantedInstance) -> Configuration:
    return configuration(inst, inst.support)


def _check(inst, x):
    if x.N != inst.N:
        raise ValueError(f"dimension mismatch: configuration N={x.N}, instance N={inst.N}")
    if int(x.bits.sum()) != inst.k:
        raise ValueError("configuration is not in Sigma_N(rho_N)")


def energy(inst: PlantedInstance, x: Configuration) -> float:
    """(x, A x), recomputed from scratch."""
    _check(inst, x)
    xf = x.bits.astype(float)
    return float(xf @ inst.A @ xf)


def hamiltonian(inst: PlantedInstance, x: Configuration) -> float:
    """H_N(x) = (x, W x)."""
    _check(inst, x)
    xf = x.bits.astype(float)
    return float(xf @ inst.W @ xf)


def energy_decomposition(inst: PlantedInstance, x: Configuration) -> tuple[float, float, float]:
    """((x, A x), H_N(x), (lambda / N) <x, v>^2)."""
    ov = _count(x.bits, inst.v)
    return energy(inst, x), hamiltonian(inst, x), inst.lam / inst.N * ov * ov


def overlap(x: Configuration, inst: PlantedInstance) -> float:
    """<x, v> / N."""
    if x.N != inst.N:
        raise ValueError("dimension mismatch")
    return _count(x.bits, inst.v) / inst.N


def swap_delta(inst: PlantedInstance, x: Configuration, i: int, j: int) -> float:
    """(x', A x') - (x, A x) for x' = x - e_i + e_j, in O(1) from cached A x."""
    if not (0 <= i < inst.N and 0 <= j < inst.N):
        raise IndexError("swap index out of range")
    if x.bits[i] != 1 or x.bits[j] != 0:
        raise ValueError("swap needs x_i = 1 and x_j = 0")
    A, r = inst.A, x.row_sums
    return float(2.0 * (r[j] - r[i]) + A[i, i] + A[j, j] - 2.0 * A[i, j])


def apply_swap(inst: PlantedInstance, x: Configuration, i: int, j: int) -> float:
    """Move x to x - e_i + e_j in place, updating caches in O(N); returns the delta."""
    delta = swap_delta(inst, x, i, j)
    x.bits[i] = 0
    x.bits[j] = 1
    x.row_sums += inst.A[:, j] - inst.A[:, i]
    x.cached_energy += delta
    x.cached_overlap += int(inst.v[j]) - int(inst.v[i])
    return delta


def resync(inst: PlantedInstance, x: Configuration) -> float:
    """Recompute caches from scratch; returns the drift that was removed."""
    fresh = _from_bits(inst, x.bits)
    drift = fresh.cached_energy - x.cached_energy
    x.cached_energy, x.cached_overlap, x.row_sums = (
        fresh.cached_energy, fresh.cached_overlap, fresh.row_sums)
    return drift


# ---------------------------------------------------------------------------
# serialization


def _pack_lower(M: np.ndarray) -> str:
    tri = M[np.tril_indices(M.shape[0])].astype("<f8")
    return base64.b64encode(tri.tobytes()).decode("ascii")


def _unpack_lower(data: str, N: int) -> np.ndarray:
    tri = np.frombuffer(base64.b64decode(data), dtype="<f8")
    M = np.zeros((N, N))
    rows, cols = np.tril_indices(N)
    M[rows, cols] = tri
    M[cols, rows] = tri
    return M


def instance_to_dict(inst: PlantedInstance) -> dict:
    return {
        "format": FORMAT_VERSION,
        "N": inst.N,
        "rho": inst.rho,
        "rho_N": inst.rho_N,
        "lambda": inst.lam,
        "seed": inst.seed,
        "shuffled": inst.shuffled,
        "support": inst.support.tolist(),
        "A_lower_b64": _pack_lower(inst.A),
        "W_lower_b64": _pack_lower(inst.W),
    }


def instance_from_dict(d: dict) -> PlantedInstance:
    N = int(d["N"])
    v = np.zeros(N, dtype=np.int8)
    v[np.asarray(d["support"], dtype=np.int64)] = 1
    A = _unpack_lower(d["A_lower_b64"], N)
    W = _unpack_lower(d["W_lower_b64"], N)
    return PlantedInstance(N, float(d["rho"]), float(d["lambda"]), int(d["seed"]), v, A, W,
                           bool(d.get("shuffled", False)))


def save_instance(inst: PlantedInstance, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance_to_dict(inst), sort_keys=True))
    return path


def load_instance(path) -> PlantedInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def payload_bytes(inst: PlantedInstance) -> bytes:
    """Canonical matrix payload used for byte-identity checks."""
    return inst.A.astype("<f8").tobytes() + inst.W.astype("<f8").tobytes()
