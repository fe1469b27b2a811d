import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submatrix_ogp import model
from submatrix_ogp.model import (AdmissibleGrid, apply_swap, configuration, energy,
                                 energy_decomposition, generate, make_rng, overlap,
                                 random_configuration, swap_delta)


def test_generate_lambda_zero_gives_noise_only():
    inst = generate(4, 0.5, 0.0, 7)
    assert inst.v.tolist() == [1, 1, 0, 0]
    assert np.array_equal(inst.A, inst.W)


def test_generate_signal_block():
    inst = generate(4, 0.5, 8.0, 7)
    diff = inst.A - inst.W
    expected = np.zeros((4, 4))
    expected[:2, :2] = 2.0
    assert np.allclose(diff, expected, atol=1e-12, rtol=0)


def test_generate_is_deterministic():
    a = generate(100, 0.3, 1.0, 1)
    b = generate(100, 0.3, 1.0, 1)
    assert model.payload_bytes(a) == model.payload_bytes(b)
    assert np.array_equal(a.v, b.v)


def test_generate_invariants():
    inst = generate(50, 0.2, 3.0, 11, shuffle=True)
    assert inst.k == 10
    assert np.array_equal(inst.W, inst.W.T)
    assert np.allclose(inst.A, inst.lam / inst.N * np.outer(inst.v, inst.v) + inst.W, atol=1e-12)


@pytest.mark.parametrize("N,rho", [(4, 0.01), (10, 0.99), (1, 0.5)])
def test_generate_rejects_degenerate(N, rho):
    with pytest.raises(ValueError):
        generate(N, rho, 1.0, 0)


@pytest.mark.parametrize("rho", [0.0, 1.0, -0.1])
def test_generate_rejects_rho_outside(rho):
    with pytest.raises(ValueError):
        generate(10, rho, 1.0, 0)


def test_goe_variances():
    rng = make_rng(5)
    N = 30
    draws = np.array([model.goe(N, rng) for _ in range(4000)])
    off = draws[:, 0, 1]
    diag = draws[:, 0, 0]
    assert abs(off.var() * N - 1.0) < 0.1
    assert abs(diag.var() * N - 2.0) < 0.2


def test_energy_of_planted_vector_without_noise():
    inst = generate(20, 0.25, 3.0, 0).with_noise(np.zeros((20, 20)))
    x = model.planted_configuration(inst)
    assert energy(inst, x) == pytest.approx(inst.lam * inst.N * inst.rho_N**2, abs=1e-12)


def test_energy_decomposition_identity():
    inst = generate(10, 0.3, 4.0, 2)
    x = random_configuration(inst, make_rng(3))
    total, H, signal = energy_decomposition(inst, x)
    assert abs(total - H - signal) < 1e-10


def test_configuration_enforces_support_size():
    inst = generate(10, 0.3, 1.0, 0)
    with pytest.raises(ValueError):
        configuration(inst, [0, 1])
    with pytest.raises(ValueError):
        model.from_bits(inst, np.zeros(10))
    with pytest.raises(ValueError):
        model.from_bits(inst, np.zeros(9))


def test_energy_dimension_mismatch():
    a = generate(10, 0.3, 1.0, 0)
    b = generate(12, 0.25, 1.0, 0)
    with pytest.raises(ValueError):
        energy(b, random_configuration(a, make_rng(0)))


def test_overlap_extremes():
    inst = generate(12, 0.25, 1.0, 0)
    assert overlap(model.planted_configuration(inst), inst) == inst.rho_N
    disjoint = configuration(inst, np.flatnonzero(inst.v == 0)[:inst.k])
    assert overlap(disjoint, inst) == 0.0


def test_uniform_overlap_mean_is_rho_squared():
    inst = generate(40, 0.25, 0.0, 0)
    rng = make_rng(9)
    vals = np.array([overlap(random_configuration(inst, rng), inst) for _ in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - inst.rho_N**2) < 3 * se


def test_swap_then_swap_back_is_zero():
    inst = generate(30, 0.2, 2.0, 4)
    x = random_configuration(inst, make_rng(1))
    i, j = int(x.ones[0]), int(x.zeros[0])
    d1 = apply_swap(inst, x, i, j)
    d2 = apply_swap(inst, x, j, i)
    assert abs(d1 + d2) < 1e-10


def test_swap_delta_matches_recompute_over_many_moves():
    inst = generate(50, 0.2, 3.0, 6)
    rng = make_rng(2)
    x = random_configuration(inst, rng)
    worst = 0.0
    for _ in range(1000):
        i = int(rng.choice(x.ones))
        j = int(rng.choice(x.zeros))
        before = energy(inst, x)
        d = apply_swap(inst, x, i, j)
        worst = max(worst, abs(d - (energy(inst, x) - before)))
    assert worst < 1e-9
    assert abs(x.cached_energy - energy(inst, x)) < 1e-9
    assert x.cached_overlap == int(np.dot(x.bits.astype(int), inst.v.astype(int)))


def test_swap_delta_zero_matrix():
    inst = generate(10, 0.3, 0.0, 0).with_noise(np.zeros((10, 10)))
    x = random_configuration(inst, make_rng(0))
    assert swap_delta(inst, x, int(x.ones[0]), int(x.zeros[0])) == 0.0


def test_swap_delta_rejects_bad_indices():
    inst = generate(10, 0.3, 1.0, 0)
    x = random_configuration(inst, make_rng(0))
    with pytest.raises(ValueError):
        swap_delta(inst, x, int(x.zeros[0]), int(x.ones[0]))
    with pytest.raises(IndexError):
        swap_delta(inst, x, 10, int(x.zeros[0]))


def test_hamiltonian_variance():
    N = 40
    inst = generate(N, 0.25, 0.0, 0)
    x = model.planted_configuration(inst)
    rng = make_rng(17)
    xf = x.bits.astype(float)
    vals = np.array([xf @ model.goe(N, rng) @ xf for _ in range(10_000)])
    target = 2.0 * N * inst.rho_N**2
    assert abs(vals.var() / target - 1.0) < 0.05


def test_serialization_round_trip(tmp_path):
    inst = generate(25, 0.2, 2.5, 8, shuffle=True)
    path = model.save_instance(inst, tmp_path / "inst.json")
    back = model.load_instance(path)
    assert model.payload_bytes(back) == model.payload_bytes(inst)
    assert np.array_equal(back.v, inst.v)
    assert (back.N, back.rho, back.lam, back.seed) == (inst.N, inst.rho, inst.lam, inst.seed)


@given(N=st.integers(2, 400), rho=st.floats(0.01, 0.99))
def test_support_size_rounding(N, rho):
    k = model.support_size(N, rho)
    assert k - 0.5 < N * rho + 1e-9 and N * rho <= k + 0.5 + 1e-9


@given(N=st.integers(2, 400), rho=st.floats(0.05, 0.95), frac=st.floats(0.0, 1.0))
def test_admissible_overlap_rounding(N, rho, frac):
    q = rho * frac
    grid = AdmissibleGrid(rho, [q])
    _, (c,) = grid.integerize(N)
    assert c <= grid.integerize(N)[0]
    raw = model.overlap_count(N, q)
    assert raw - 0.5 <= N * q + 1e-9 and N * q < raw + 0.5 + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), perm_seed=st.integers(0, 2**32))
def test_energy_permutation_invariance(seed, perm_seed):
    inst = generate(12, 0.25, 2.0, seed)
    x = random_configuration(inst, make_rng(seed + 1))
    p = make_rng(perm_seed).permutation(12)
    A = inst.A[np.ix_(p, p)]
    xb = x.bits[p].astype(float)
    assert abs(xb @ A @ xb - energy(inst, x)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), moves=st.integers(1, 300))
def test_cache_agreement_after_random_moves(seed, moves):
    inst = generate(20, 0.3, 1.5, seed)
    rng = make_rng(seed)
    x = random_configuration(inst, rng)
    for _ in range(moves):
        apply_swap(inst, x, int(rng.choice(x.ones)), int(rng.choice(x.zeros)))
    assert abs(x.cached_energy - energy(inst, x)) < 1e-9
    assert 0 <= x.cached_overlap <= inst.k
    assert len(x.ones) == inst.k
