"""Revolving-door ordering of k-subsets: consecutive subsets differ by one swap."""

from __future__ import annotations

import numba
import numpy as np


def revolving_door(n: int, k: int) -> np.ndarray:
    """All k-subsets of range(n) as rows, in revolving-door order.

    R(n, k) = R(n-1, k) followed by reversed R(n-1, k-1) with n-1 appended.
    """
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    table: dict[tuple[int, int], np.ndarray] = {}

    def build(nn, kk):
        key = (nn, kk)
        if key in table:
            return table[key]
        if kk == 0:
            out = np.zeros((1, 0), dtype=np.int64)
        elif kk == nn:
            out = np.arange(nn, dtype=np.int64)[None, :]
        else:
            head = build(nn - 1, kk)
            tail = build(nn - 1, kk - 1)[::-1]
            tail = np.hstack([tail, np.full((len(tail), 1), nn - 1, dtype=np.int64)])
            out = np.vstack([head, tail])
        table[key] = out
        return out

    return build(n, k)


def swap_sequence(combos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(out, in) element pairs turning each row of ``combos`` into the next."""
    n_rows = len(combos)
    outs = np.empty(max(n_rows - 1, 0), dtype=np.int64)
    ins = np.empty_like(outs)
    for r in range(n_rows - 1):
        a, b = set(combos[r].tolist()), set(combos[r + 1].tolist())
        (o,), (i,) = a - b, b - a
        outs[r], ins[r] = o, i
    return outs, ins


@numba.njit(cache=True)
def walk_energies(A, start, outs, ins, v):
    """Energies and overlaps along a swap sequence, updated in O(N) per step."""
    N = A.shape[0]
    x = np.zeros(N)
    for i in start:
        x[i] = 1.0
    r = A @ x
    e = 0.0
    for i in range(N):
        e += x[i] * r[i]
    ov = 0
    for i in start:
        ov += v[i]
    n_steps = len(outs)
    energies = np.empty(n_steps + 1)
    overlaps = np.empty(n_steps + 1, dtype=np.int64)
    energies[0] = e
    overlaps[0] = ov
    for t in range(n_steps):
        i = outs[t]
        j = ins[t]
        e += 2.0 * (r[j] - r[i]) + A[i, i] + A[j, j] - 2.0 * A[i, j]
        for l in range(N):
            r[l] += A[l, j] - A[l, i]
        ov += v[j] - v[i]
        energies[t + 1] = e
        overlaps[t + 1] = ov
    return energies, overlaps
