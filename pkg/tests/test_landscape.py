import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submatrix_ogp import landscape as ls
from submatrix_ogp.parisi.pde import SolverConfig

CHEAP = SolverConfig(K=8)


def _double_well(q):
    """Local max at 0.015, a dip, then the global max at 0.09 (beyond rho^1.1 for rho = 0.1)."""
    return (0.5 * np.exp(-((q - 0.015) / 0.004) ** 2)
            + 1.0 * np.exp(-((q - 0.09) / 0.005) ** 2))


def test_double_well_detected_with_expected_witnesses():
    rho, eps = 0.1, 0.1
    q = np.linspace(0.001, 0.099, 197)
    v = ls.detect_ogp(q, _double_well(q), rho, eps)
    assert v.holds
    w, x, y = v.witnesses
    assert w < rho**2 < x < y < rho ** (1 + eps)
    assert abs(x - 0.015) < 1e-3
    assert 0.03 < y < rho ** (1 + eps)
    assert v.margins["condition2"] > 0.45
    assert v.margins["condition3"] > 0.5


def test_double_well_rejected_above_tolerance():
    q = np.linspace(0.001, 0.099, 197)
    v = ls.detect_ogp(q, _double_well(q), 0.1, 0.1, tolerance=0.6)
    assert not v.holds
    assert v.diagnostic == "margins below tolerance"


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_monotone_curves_have_no_gap(sign):
    q = np.linspace(0.001, 0.099, 99)
    for eps in ls.EPSILONS:
        assert not ls.detect_ogp(q, sign * q, 0.1, eps).holds
        assert not ls.detect_ogp(q, sign * np.sqrt(q), 0.1, eps).holds


def test_no_witness_below_rho_squared():
    q = np.linspace(0.02, 0.09, 20)
    v = ls.detect_ogp(q, _double_well(q), 0.1, 0.1)
    assert not v.holds
    assert v.witnesses is None


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=5, max_size=40), st.sampled_from(ls.EPSILONS))
def test_increasing_curves_never_have_gap(steps, eps):
    q = np.linspace(0.001, 0.099, len(steps))
    E = np.cumsum(np.abs(steps) + 1e-6)
    assert not ls.detect_ogp(q, E, 0.1, eps).holds


def test_scan_epsilon_returns_largest_passing():
    q = np.linspace(0.001, 0.099, 197)
    E = _double_well(q)
    v = ls.scan_epsilon(q, E, 0.1)
    passing = [e for e in ls.EPSILONS if ls.detect_ogp(q, E, 0.1, e).holds]
    assert v.holds and v.epsilon == max(passing)


def test_stencils_are_exact_for_polynomials():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 1, 25))
    quartic = 1 - 2 * x + 3 * x**2 - x**3 + 0.5 * x**4
    dquartic = -2 + 6 * x - 3 * x**2 + 2 * x**3
    d = ls.central_differences(x, quartic)
    assert np.isnan(d[0]) and np.isnan(d[-1])
    assert np.allclose(d[2:-2], dquartic[2:-2], atol=1e-8)
    quad = 1 + x - 4 * x**2
    assert np.allclose(ls.central_differences(x, quad)[1:-1], (1 - 8 * x)[1:-1], atol=1e-9)


@pytest.mark.parametrize("rho", [0.02, 0.05, 0.1, 0.2])
def test_default_grid_contents(rho):
    q = ls.default_q_grid(rho)
    assert np.all(np.diff(q) > 0)
    assert q[0] > 0 and q[-1] < rho
    assert np.any(q < rho**2)
    for target in (rho**2, rho**1.5):
        assert np.min(np.abs(q - target)) < 1e-12
    assert len(q) <= 61


def test_regime_lines():
    assert ls.regime_ceiling(0.1) == pytest.approx(0.1 ** -(2 - math.sqrt(2)))
    assert ls.slepian_line(0.1) == pytest.approx(2 * math.sqrt(1e-3 * math.log(10)))
    assert ls.lambda_from_c1(2.0)(0.1) == [pytest.approx(2 * math.sqrt(10 * math.log(10)))]


@pytest.fixture(scope="module")
def small_curve():
    rho = 0.1
    q = np.linspace(0.004, 0.096, 24)
    return ls.energy_curve(rho, 0.0, q, CHEAP)


def test_curve_assembly_identity(small_curve):
    c5 = small_curve.with_lambda(5.0)
    assert np.allclose(c5.E, 5.0 * c5.q_grid**2 + c5.min_P, atol=1e-14)
    fresh = ls.energy_curve(0.1, 5.0, small_curve.q_grid, CHEAP)
    assert np.allclose(fresh.E, c5.E, atol=1e-12)
    assert np.allclose(fresh.dE_formula, c5.dE_formula, atol=1e-12)


def test_curve_derivatives_agree(small_curve):
    for lam in (0.0, 5.0):
        c = small_curve.with_lambda(lam)
        assert c.derivative_agreement().mean() >= 0.9


def test_curve_csv_and_subset(small_curve):
    text = small_curve.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "q,E,dE_formula,dE_fd,Lambda1,Lambda2,mass_m,c"
    assert len(lines) == len(small_curve.q_grid) + 1
    sub = small_curve.subset(np.arange(0, len(small_curve.q_grid), 2))
    assert np.array_equal(sub.q_grid, small_curve.q_grid[::2])
    assert np.all(small_curve.converged)


def test_energy_curve_rejects_bad_grid():
    with pytest.raises(ValueError):
        ls.energy_curve(0.1, 0.0, [0.05, 0.1], CHEAP)


def test_phase_scan_rows_and_warning():
    q = lambda rho: np.array([rho**2.5, rho**2, rho**1.5, 0.5 * rho, 0.8 * rho])
    rule = lambda rho: [1.0, 2.0 * ls.regime_ceiling(rho)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = ls.phase_scan([0.1, 0.2], rule, config=CHEAP, q_grid_fn=q, estimate_noise=False)
    assert len(rows) == 4
    assert [r.regime_warning for r in rows] == [False, True, False, True]
    assert sum("outside the overlap-gap regime" in str(w.message) for w in caught) == 2
    d = rows[0].as_dict()
    for key in ("rho", "lambda", "ogp", "epsilon", "slepian", "it_line", "spectral_line"):
        assert key in d
    csv_text = ls.rows_to_csv([r.as_dict() for r in rows])
    assert len(csv_text.strip().split("\n")) == 5


def test_solver_noise_is_small():
    noise = ls.solver_noise(0.1, [0.01], CHEAP)
    assert 0.0 <= noise < 1e-2
