"""One test per acceptance criterion; each logs a PASS/FAIL line (see conftest)."""

import functools
import math
import shutil
import time
import warnings

import numpy as np

from submatrix_ogp import cli, landscape, mcmc, oracle
from submatrix_ogp import estimators as est
from submatrix_ogp.model import generate
from submatrix_ogp.parisi.functional import solve_pde
from submatrix_ogp.parisi.gaussian import norm_cdf, norm_pdf, norm_ppf
from submatrix_ogp.parisi.measure import OrderParameterMeasure
from submatrix_ogp.parisi.rpc import cascade_value, random_steps
from submatrix_ogp.parisi.solve import minimize


# ---------------------------------------------------------------------------
# shared landscape data (solves are memoised inside the landscape module)

SCAN_RHO = 0.02
SCAN_C1 = (1.0, 2.0, 3.0)


@functools.cache
def _base_curve(rho):
    return landscape.energy_curve(rho, 0.0)


def _curves_checked():
    curves = [(0.2, lam, _base_curve(0.2).with_lambda(lam)) for lam in (0.0, 5.0)]
    for c1 in SCAN_C1:
        lam = landscape.lambda_from_c1(c1)(SCAN_RHO)[0]
        curves.append((SCAN_RHO, lam, _base_curve(SCAN_RHO).with_lambda(lam)))
    return curves


def _scan(q_grid_fn):
    rule = lambda rho: [landscape.lambda_from_c1(c1)(rho)[0] for c1 in SCAN_C1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return landscape.phase_scan([SCAN_RHO], rule, q_grid_fn=q_grid_fn)


# ---------------------------------------------------------------------------


def test_01_parisi_closed_form(acceptance):
    rho = 0.25
    sigma = 2 * math.sqrt(rho)
    nu = OrderParameterMeasure.zero(rho)
    errs, times = [], []
    for Lam in (-1.0, -0.3, 0.0, 0.3, 1.0):
        t0 = time.perf_counter()
        f = solve_pde(nu, Lam)
        times.append(time.perf_counter() - t0)
        errs.append(abs(f.u00 - (sigma * norm_pdf(Lam / sigma) + Lam * norm_cdf(Lam / sigma))))
    u00 = solve_pde(nu, 0.0).u00
    ok = (abs(u00 - 1 / math.sqrt(2 * math.pi)) < 1e-6 and max(errs) < 1e-6 and max(times) < 1.0)
    acceptance.report(1, "parisi-closed-form", ok,
                      f"max err {max(errs):.2e} (tol 1e-6), max solve {max(times):.3f}s (limit 1s)")
    assert ok


def test_02_cole_hopf_oracle(acceptance):
    rng = np.random.default_rng(2024)
    rho = 0.15
    rel = []
    for n_steps in [1] * 10 + [2] * 10:
        steps = random_steps(rng, rho, n_steps)
        breaks = [t for t, _ in steps] + [rho]
        nu = OrderParameterMeasure.zero_temp(rho, [m for _, m in steps], breaks=breaks)
        y = float(rng.uniform(-0.8, 0.5))
        ref = cascade_value(y, steps, rho)
        rel.append(abs(solve_pde(nu, y).u00 - ref) / abs(ref))
    ok = max(rel) < 1e-5
    acceptance.report(2, "cole-hopf-oracle", ok, f"20 measures, max rel err {max(rel):.2e} (tol 1e-5)")
    assert ok


def test_03_stationarity_and_bounds(acceptance):
    t0 = time.perf_counter()
    worst_res, sandwich_ok, mass_ok, lam_eq_ok, dE_ok = 0.0, True, True, True, True
    mass_fail = []
    for rho in (0.05, 0.1, 0.2):
        sigma = 2 * math.sqrt(rho)
        slack = 2 * math.sqrt(rho * math.log(1 / rho))
        mass_bound = 0.5 * math.sqrt(rho * math.log(1 / rho))
        for q in (rho**2, rho**1.5, 0.5 * rho):
            for lam in (0.0, 5.0):
                s = minimize(rho, q, lam)
                worst_res = max(worst_res, max(s.stationarity.values()))
                L1, L2 = s.lambda_star
                c1 = sigma * norm_ppf(q / rho)
                c2 = sigma * norm_ppf((rho - q) / (1 - rho))
                sandwich_ok &= (c1 - slack <= L1 <= c1) and (c2 - slack <= L2 <= c2)
                if s.mass > mass_bound:
                    mass_ok = False
                    if lam == 0.0:      # the minimiser, hence the mass, does not depend on lambda
                        mass_fail.append(f"rho={rho},q={q:.4g}:{s.mass:.3f}>{mass_bound:.3f}")
                if abs(q - rho**2) < 1e-15:
                    lam_eq_ok &= abs(L1 - L2) < 1e-4 * (1 + abs(L1))
                    if lam == 5.0:
                        dE_ok &= abs(s.dE_formula - 2 * lam * rho**2) <= 0.01 * 2 * lam * rho**2
    elapsed = time.perf_counter() - t0
    ok = worst_res < 1e-4 and sandwich_ok and mass_ok and lam_eq_ok and dE_ok and elapsed < 600
    acceptance.report(
        3, "stationarity-and-bounds", ok,
        f"residual {worst_res:.1e} (tol 1e-4); quantile sandwich {sandwich_ok}; "
        f"Lambda1=Lambda2 at rho^2 {lam_eq_ok}; dE=2 lam rho^2 {dE_ok}; "
        f"mass <= sqrt(rho log(1/rho))/2 {mass_ok} [{'; '.join(mass_fail)}]; {elapsed:.0f}s")
    assert ok


def test_04_derivative_consistency(acceptance):
    fractions = []
    for rho, lam, curve in _curves_checked():
        fractions.append((rho, lam, float(curve.derivative_agreement().mean())))
    ok = all(f >= 0.9 for _, _, f in fractions)
    detail = ", ".join(f"rho={r} lam={l:.3g}: {f:.1%}" for r, l, f in fractions)
    acceptance.report(4, "derivative-consistency", ok, detail + " (need >= 90%)")
    assert ok


def test_05_beta_ladder(acceptance):
    rho, q = 0.1, 0.01
    E = minimize(rho, q, 0.0).energy
    gaps = [minimize(rho, q, 0.0, beta=b, entropy_offset=True).energy - E for b in (4, 8, 16, 32)]
    ok = (all(g > 0 for g in gaps) and all(a >= b for a, b in zip(gaps, gaps[1:]))
          and gaps[-1] < 3 * math.log(2) / 32)
    acceptance.report(5, "beta-ladder", ok,
                      "gaps " + ", ".join(f"{g:.4f}" for g in gaps)
                      + f"; final < {3 * math.log(2) / 32:.4f}")
    assert ok


def test_06_exact_oracle_cross_checks(acceptance):
    inst = generate(12, 0.5, 3.0, 0)
    en = oracle.enumerate_classes(inst)
    worst = -math.inf
    for beta in (1.0, 10.0, 100.0):
        for lhs, rhs in oracle.sandwich_gap(en, beta).values():
            worst = max(worst, lhs - rhs)
    prof = oracle.enumerate_profile(en)
    gray_e, _ = oracle.gray_walk(inst)
    direct = max(best for _, best in oracle.direct_scan(inst).values())
    mle_diff = max(abs(prof.mle_value * 12 - gray_e.max()), abs(prof.mle_value * 12 - direct))
    ok = worst <= 1e-12 and mle_diff <= 1e-10 and prof.mle_value == max(prof.E_N)
    acceptance.report(6, "exact-oracle", ok,
                      f"max (gap - bound) {worst:.3g}; profile max vs MLE routes diff {mle_diff:.1e}")
    assert ok


def test_07_mcmc_correctness(acceptance):
    inst = generate(10, 0.5, 5.0, 0)
    _, counts = mcmc.visit_counts(inst, 2.0, 10**7, seed=7)
    pi = oracle.stationary_law(oracle.state_space(inst), 2.0)
    tv = 0.5 * float(np.abs(counts / counts.sum() - pi).sum())

    inst_exit = generate(10, 0.5, 3.0, 0)
    exact = oracle.exact_exit_statistics(inst_exit, 4.0, (0.2, 0.4)).expected
    sims = mcmc.exit_times(inst_exit, 4.0, (0.2, 0.4), 5000, seed=11)
    rel = abs(sims.mean() - exact) / exact

    n_wells, worst_ratio = 0, 0.0
    for N, rho in ((10, 0.5), (12, 0.5), (12, 1 / 3)):
        for lam in (3.0, 5.0, 8.0):
            for beta in (1.0, 2.0, 4.0):
                for seed in range(2):
                    g = generate(N, rho, lam, seed)
                    wells = oracle.rate_function(g, beta, 1 / N).wells()
                    if not wells:
                        continue
                    chain = oracle.transition_matrix(g, beta)
                    for w in wells:
                        st = oracle.exact_exit_statistics(g, beta, (w.a, w.b), T=(1, 10, 100, 1000),
                                                          chain=chain)
                        n_wells += 1
                        worst_ratio = max(worst_ratio,
                                          float(np.max(st.prob_exit_by / (st.T * math.exp(-w.depth)))))
    ok = tv < 0.02 and rel < 0.05 and n_wells > 0 and worst_ratio <= 1.0
    acceptance.report(7, "mcmc-correctness", ok,
                      f"TV {tv:.2e} (tol 0.02); exit exact {exact:.1f} vs sim {sims.mean():.1f} "
                      f"({rel:.1%}, tol 5%); {n_wells} wells, max P/(T e^-h) {worst_ratio:.2e}")
    assert ok


def test_08_slepian_bound(acceptance):
    N = 20
    parts, ok = [], True
    for rho in (0.25, 0.5):
        vals = []
        for seed in range(50):
            inst = generate(N, rho, 0.0, seed)
            vals.append(oracle.exact_mle(inst)[0] / N)
        vals = np.array(vals)
        k = inst.k
        bound = math.sqrt(4 * N * (k / N) ** 2 * oracle.log_binom(N, k)) / N
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        passed = vals.mean() <= bound + 3 * se
        ok &= passed
        parts.append(f"rho={rho}: mean {vals.mean():.4f} <= {bound:.4f} + 3*{se:.4f}")
    acceptance.report(8, "slepian-bound", ok, "; ".join(parts))
    assert ok


def test_09_spectral_estimator(acceptance):
    N0 = 300
    clean = generate(N0, 0.1, 5.0, 0).with_noise(np.zeros((N0, N0)))
    exact_one = est.spectral_round(clean, seed=0).overlap_frac == 1.0

    null = generate(500, 0.1, 0.0, 1)
    r0 = est.spectral_round(null, seed=1)
    k, N = null.k, null.N
    sd = math.sqrt((k / N) * (1 - k / N) * (N - k) / (N - 1) / k)
    null_ok = abs(r0.overlap_frac - null.rho_N) < 3 * sd

    successes, sandwich_ok = 0, True
    lo, hi = est.set_size_bounds(0.1, est.DEFAULT_DELTA)
    for seed in range(20):
        inst = generate(2000, 0.1, 30.0, seed, shuffle=True)
        rep = est.spectral_round(inst, seed=seed)
        if rep.overlap_frac >= 0.5:
            successes += 1
            sandwich_ok &= lo <= rep.extra["selected_frac"] <= hi
    ok = exact_one and null_ok and successes >= 18 and sandwich_ok
    acceptance.report(9, "spectral-estimator", ok,
                      f"W=0 exact {exact_one}; null overlap {r0.overlap_frac:.3f} vs rho 0.1 "
                      f"(3 sd {3 * sd:.3f}); {successes}/20 >= 0.5 at lam rho = 3; "
                      f"set-size sandwich {sandwich_ok}")
    assert ok


def test_10_annealed_mle(acceptance):
    hits = 0
    for rho, lam in ((0.25, 2.0), (0.5, 0.0)):
        for seed in range(20):
            inst = generate(16, rho, lam, seed)
            best, _ = oracle.exact_mle(inst)
            rep = est.anneal_mle(inst, seed=seed)
            hits += abs(rep.extra["best_energy"] - best) <= 1e-9
    ok = hits >= 38
    acceptance.report(10, "annealed-mle", ok, f"{hits}/40 runs within 1e-9 of the exact MLE at N=16")
    assert ok


def test_11_ogp_detector(acceptance):
    rho, eps = 0.1, 0.1
    q = np.linspace(0.001, 0.099, 197)
    E = 0.5 * np.exp(-((q - 0.015) / 0.004) ** 2) + np.exp(-((q - 0.09) / 0.005) ** 2)
    v = landscape.detect_ogp(q, E, rho, eps)
    well_ok = bool(v.holds and v.witnesses and abs(v.witnesses[1] - 0.015) < 1e-3
                   and v.witnesses[0] < rho**2 < v.witnesses[1] < v.witnesses[2] < rho ** (1 + eps))
    mono_ok = not any(landscape.detect_ogp(q, s * f(q), rho, e).holds
                      for s in (1.0, -1.0) for f in (lambda x: x, np.sqrt) for e in landscape.EPSILONS)
    fine = _scan(landscape.default_q_grid)
    coarse = _scan(lambda r: landscape.default_q_grid(r)[::2])
    stable = [(a.ogp, a.epsilon if a.ogp else None) == (b.ogp, b.epsilon if b.ogp else None)
              for a, b in zip(fine, coarse)]
    ok = well_ok and mono_ok and all(stable)
    verdicts = ", ".join(f"lam={a.lam:.3g}: {a.ogp}/{b.ogp}" for a, b in zip(fine, coarse))
    acceptance.report(11, "ogp-detector", ok,
                      f"double well {well_ok} (witnesses {v.witnesses}); monotone rejected {mono_ok}; "
                      f"rho=0.02 fine/coarse verdicts {verdicts}")
    assert ok


CLI_RUNS = {
    "generate": ["--n", "40", "--rho", "0.2", "--lambda", "3", "--seed", "4", "--shuffle", "true"],
    "oracle": ["--n", "10", "--rho", "0.5", "--lambda", "3", "--beta", "2"],
    "parisi": ["--rho", "0.1", "--q", "0.01", "--lambda", "5", "--K", "8"],
    "landscape": ["--rho", "0.1", "--lambda", "5", "--K", "8", "--q", "0.005,0.01,0.02,0.03,0.05,0.07,0.09"],
    "ogp-scan": ["--rho", "0.05", "--c1", "3", "--K", "8", "--noise", "false"],
    "mcmc": ["--n", "30", "--rho", "0.2", "--lambda", "3", "--steps", "20000", "--stride", "10",
             "--replicas", "2"],
    "estimate": ["--n", "300", "--rho", "0.1", "--lambda", "30", "--seeds", "3",
                 "--estimators", "spectral,anneal,random"],
    "thresholds": ["--rho", "0.01,0.05,0.1,0.2", "--lambda", "10"],
}


def test_12_end_to_end_reproducibility(acceptance, tmp_path):
    results = {}
    for command, argv in CLI_RUNS.items():
        out = tmp_path / command
        code = cli.main([command, *argv, "--out", str(out)])
        if code != 0:
            results[command] = f"exit {code}"
            continue
        same, _ = cli.replay(str(out / "manifest.json"), str(tmp_path / f"{command}-replay"))
        results[command] = "identical" if same else "differs"
        shutil.rmtree(tmp_path / f"{command}-replay")
    ok = set(results) == set(cli.COMMANDS) and all(r == "identical" for r in results.values())
    acceptance.report(12, "end-to-end-reproducibility", ok,
                      ", ".join(f"{c}: {r}" for c, r in results.items()))
    assert ok
