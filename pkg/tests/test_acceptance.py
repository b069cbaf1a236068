"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import itertools
import json
import math

import numpy as np
import pandas as pd
import pytest
import yaml

from svarbands.bootstrap_cov import BootstrapConfig, bootstrap_lambda
from svarbands.cli_io import EXIT_OK, main
from svarbands.confidence_sets import bands, cs_q, hausdorff, plugin_sets_theta
from svarbands.mc_harness import get_design, population_sets, run_experiment
from svarbands.moment_inequality import CriticalValueConfig, critical_value, evaluate_moments, nnls, standardized_stack
from svarbands.restrictions import RestrictionSet, SignRestriction, ThetaTarget, build_phi, theta_value
from svarbands.sphere import polar_grid_2d, sample_uniform
from svarbands.var_core import VarDGP, VarSpec, companion_matrix, estimate_ols, simulate_var, spectral_radius, vma_arrays

from conftest import ACCEPTANCE_LINES, macro_config, write_macro_csv


def report(k, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. population identified sets of Design 1


def test_criterion_1_population_sets():
    pop = population_sets("1")
    f = pop.ftheta[0]
    arc = pop.fq_length / np.pi
    ok = abs(f.lo - 0.0) <= 0.005 and abs(f.hi - 0.579) <= 0.005 and abs(arc - 0.42) <= 0.01
    report(1, ok, f"F^theta=[{f.lo:.4f}, {f.hi:.4f}] (want [0, 0.579] +-0.005), arc={arc:.4f}pi (want 0.42 +-0.01)")


# ---------------------------------------------------------------------------
# 2. Experiment 1 at desk scale


@pytest.mark.slow
def test_criterion_2_design1_coverage():
    r = run_experiment("1", T=100, n_sim=500, alpha1=0.05, alpha2=0.05, n_lambda=1000, n_z=1000, seed=2024)
    ok_q = abs(r.cov_q - 0.938) <= 0.033
    ok_t = abs(r.cov_theta - 0.980) <= 0.020
    ok_l = abs(r.len_theta - 0.671) <= 0.05
    report(
        2,
        ok_q and ok_t and ok_l,
        f"cov_q={r.cov_q:.3f} (0.938+-0.033), cov_theta={r.cov_theta:.3f} (0.980+-0.020), "
        f"length={r.len_theta:.3f} (0.671+-0.05), n_sim={r.n_sim}",
    )


# ---------------------------------------------------------------------------
# 3. Experiment 2: multi-horizon shrinkage in Design 2


@pytest.mark.slow
def test_criterion_3_multi_horizon_shrinkage():
    f01 = population_sets("2-h01").ftheta[0].length
    f04 = population_sets("2-h04").ftheta[0].length
    r01 = run_experiment("2-h01", T=100, n_sim=500, n_lambda=1000, n_z=1000, seed=2025)
    r04 = run_experiment("2-h04", T=100, n_sim=500, n_lambda=1000, n_z=1000, seed=2026)
    ok = (
        abs(f01 - 0.265) <= 0.01
        and abs(f04 - 0.006) <= 0.003
        and abs(r01.mean_binding - 1.29) <= 1.0
        and abs(r04.mean_binding - 7.78) <= 1.0
        and r04.mean_binding > r01.mean_binding
    )
    report(
        3,
        ok,
        f"F^theta length {f01:.4f} -> {f04:.4f} (0.265+-0.01 -> 0.006+-0.003), "
        f"binding {r01.mean_binding:.2f} -> {r04.mean_binding:.2f} (1.29 -> 7.78, +-1.0)",
    )


# ---------------------------------------------------------------------------
# 4. Experiment 3 conservativeness


@pytest.mark.slow
def test_criterion_4_exp3_conservative():
    d = get_design("exp3")
    r = run_experiment(d, T=170, n_sim=200, n_lambda=1000, n_q=5000, n_z=1000, seed=2027)
    cells = []
    for t, s in zip(d.restrictions.targets, r.targets):
        if t.variable == 0:
            cells += [s.cov_lo, s.cov_hi]
    cells = np.array(cells)
    ok = cells.min() >= 0.90 and np.mean(cells > 0.95) > 0.5
    report(
        4,
        ok,
        f"variable 1 endpoint coverage over 24 horizons: min={cells.min():.3f} (>=0.90), "
        f"share>0.95 = {np.mean(cells > 0.95):.2f} (>0.5), empty CS^q in {r.n_empty}/{r.n_sim}",
    )


# ---------------------------------------------------------------------------
# 5. solver oracle


def face_enumeration(y, B):
    """Exhaustive search over all faces of the orthant: exact for small k."""
    k = len(y)
    best = math.inf
    for size in range(k + 1):
        for free in itertools.combinations(range(k), size):
            free = list(free)
            nu = np.zeros(k)
            if free:
                fixed = [i for i in range(k) if i not in free]
                # stationarity on the free block: B_ff (nu_f - y_f) = B_f,fixed y_fixed
                rhs = B[np.ix_(free, fixed)] @ (-y[fixed]) if fixed else np.zeros(len(free))
                nu_f = y[free] + np.linalg.solve(B[np.ix_(free, free)], -rhs)
                if np.any(nu_f < -1e-12):
                    continue
                nu[free] = np.maximum(nu_f, 0)
            d = y - nu
            best = min(best, float(d @ B @ d))
    return best


def grid_search(y, B, points=21, rounds=40):
    """Coarse-to-fine grid over a box containing the minimizer."""
    k = len(y)
    lo, up = np.zeros(k), np.full(k, np.abs(y).max() * 3 + 1.0)
    for _ in range(rounds):
        pts = np.array(list(itertools.product(*[np.linspace(lo[i], up[i], points) for i in range(k)])))
        d = pts - y
        best = pts[np.argmin(np.einsum("ij,jk,ik->i", d, B, d))]
        w = (up - lo) / (points - 1)
        lo, up = np.maximum(best - w, 0), best + w
    d = best - y
    return float(d @ B @ d)


def test_criterion_5_solver_oracle():
    rng = np.random.default_rng(55)
    worst_enum = worst_grid = worst_id = 0.0
    n_grid = 0
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        Qm, _ = np.linalg.qr(rng.standard_normal((k, k)))
        B = Qm @ np.diag(np.exp(rng.uniform(0, np.log(50), k))) @ Qm.T
        y = rng.standard_normal(k) * 2
        _, obj = nnls(y, B)
        worst_enum = max(worst_enum, abs(obj - face_enumeration(y, B)) / max(1.0, obj))
        if k <= 3:
            n_grid += 1
            worst_grid = max(worst_grid, abs(obj - grid_search(y, B)) / max(1.0, obj))
        _, obj_id = nnls(y)
        worst_id = max(worst_id, abs(obj_id - np.sum(np.minimum(y, 0) ** 2)))
    ok = worst_enum <= 1e-4 and worst_grid <= 1e-4 and worst_id <= 1e-8
    report(
        5,
        ok,
        f"1000 instances k<=6: max gap vs exhaustive face search {worst_enum:.1e}, "
        f"vs grid search ({n_grid} with k<=3) {worst_grid:.1e} (<=1e-4); identity closed form {worst_id:.1e} (<=1e-8)",
    )


# ---------------------------------------------------------------------------
# 6. critical-value oracle


def test_criterion_6_critical_value():
    stack = standardized_stack(np.array([0.0]))
    c = critical_value(stack, np.array([1.0]), cfg=CriticalValueConfig(alpha1=0.05, n_z=10_000, seed=6))
    report(6, abs(c - 2.706) <= 0.1, f"c={c:.4f} (2.706 +-0.1)")


# ---------------------------------------------------------------------------
# 7. structural invariants on randomized inputs


def _random_var(rng, n, p):
    while True:
        coefs = rng.standard_normal((p, n, n)) * 0.4 / max(1, p)
        if p == 0 or spectral_radius(coefs) < 0.95:
            break
    M = rng.standard_normal((n, n))
    return VarDGP(coefs, M @ M.T + 0.5 * np.eye(n))


def test_criterion_7_invariants():
    cases = 200
    fails = {}
    designs = ["1", "2", "3", "4", "2-h01", "3-h01"]

    # F^q inside CS^q and F^theta inside CS^theta on estimated bivariate designs
    bad = 0
    for i in range(cases):
        d = get_design(designs[i % len(designs)])
        y = simulate_var(d.dgp, 100, np.random.default_rng([7, i]))
        est = estimate_ols(y, d.spec)
        stack = build_phi(est, d.restrictions)
        b = bootstrap_lambda(est, stack, BootstrapConfig(50, i, allow_explosive=True))
        stack = stack.with_covariance(b.lambda_qq, b.lambda_theta, b.L)
        res = cs_q(stack, polar_grid_2d(200, d.grid_interval), cfg=CriticalValueConfig(n_z=200, seed=i))
        ok = np.all(res.in_cs[res.in_fhat])
        for e in bands(stack, res).entries:
            ok &= e.fhat.issubset(e.cs, tol=1e-12)
        bad += not ok
    fails["Fhat in CS"] = bad

    # variance shares in [0, 1]
    rng = np.random.default_rng(71)
    bad = 0
    for _ in range(cases):
        n = int(rng.integers(2, 5))
        dgp = _random_var(rng, n, int(rng.integers(0, 3)))
        q = rng.standard_normal(n)
        v = theta_value(dgp, ThetaTarget(int(rng.integers(n)), int(rng.integers(0, 6)), "variance-decomposition"), q / np.linalg.norm(q))
        bad += not (-1e-12 <= v <= 1 + 1e-12)
    fails["variance share"] = bad

    # unit-norm grids
    bad = 0
    for _ in range(cases):
        n_q = int(rng.integers(2, 500))
        g = polar_grid_2d(n_q) if rng.random() < 0.5 else sample_uniform(int(rng.integers(2, 7)), n_q, rng)
        bad += np.max(np.abs(np.linalg.norm(g.points, axis=1) - 1)) > 1e-12
    fails["unit norm"] = bad

    # G and c(q) unchanged when the data are rescaled variable by variable
    bad = 0
    restr = RestrictionSet(sign=(SignRestriction(0, 0), SignRestriction(1, 0, -1), SignRestriction(2, 1)))
    for i in range(cases):
        r = np.random.default_rng([72, i])
        dgp = _random_var(r, 3, 1)
        y = simulate_var(dgp, 150, r).values
        D = np.exp(r.uniform(-3, 3, 3))
        Q = r.standard_normal((20, 3))
        Q /= np.linalg.norm(Q, axis=1, keepdims=True)
        out = []
        for data in (y, y * D):
            est = estimate_ols(data, VarSpec(1, "intercept"))
            st = build_phi(est, restr)
            b = bootstrap_lambda(est, st, BootstrapConfig(50, i, allow_explosive=True))
            st = st.with_covariance(b.lambda_qq, b.lambda_theta, b.L)
            out.append(evaluate_moments(st, Q, "identity", CriticalValueConfig(n_z=100, seed=i)))
        g0, g1 = out
        bad += not (
            np.allclose(g1.G, g0.G, rtol=1e-8, atol=1e-8) and np.allclose(g1.crit, g0.crit, rtol=1e-8, atol=1e-8)
        )
    fails["scale invariance"] = bad

    # VMA recursion against companion powers
    bad = 0
    for _ in range(cases):
        n, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        coefs = _random_var(rng, n, p).coefs
        C = vma_arrays(coefs, 10)
        F = companion_matrix(coefs)
        P = np.eye(n * p)
        err = 0.0
        for h in range(11):
            err = max(err, np.max(np.abs(C[h] - P[:n, :n])))
            P = P @ F
        bad += err > 1e-10
    fails["VMA vs companion"] = bad

    detail = ", ".join(f"{k} {cases - v}/{cases}" for k, v in fails.items())
    report(7, not any(fails.values()), detail)


# ---------------------------------------------------------------------------
# 8. consistency of the plug-in set


def test_criterion_8_hausdorff_consistency():
    d = get_design("1")
    pop = population_sets(d).ftheta[0]
    grid = polar_grid_2d(4000, d.grid_interval)
    medians = []
    for T in (100, 500, 5000):
        dist = []
        for rep in range(50):
            y = simulate_var(d.dgp, T, np.random.default_rng([8, T, rep]))
            stack = build_phi(estimate_ols(y, d.spec), d.restrictions)
            dist.append(hausdorff(plugin_sets_theta(stack, grid.points)[0], pop))
        medians.append(float(np.median(dist)))
    ok = medians[0] > medians[1] > medians[2]
    report(8, ok, "median Hausdorff at T=100/500/5000: " + " > ".join(f"{m:.4f}" for m in medians))


# ---------------------------------------------------------------------------
# 9. empirical pipeline, qualitative


@pytest.mark.slow
def test_criterion_9_empirical(tmp_path):
    # A long synthetic sample built like the quarterly macro data set, so the
    # qualitative conclusions are not swamped by sampling noise.
    write_macro_csv(tmp_path / "data.csv", 3000, 7)
    sign_cfg = macro_config("data.csv", zero=False, n_q=20_000, output=tmp_path / "sign", bayes_draws=5000)
    zero_cfg = macro_config("data.csv", zero=True, n_q=629, output=tmp_path / "zero")
    (tmp_path / "sign.yaml").write_text(yaml.safe_dump(sign_cfg))
    (tmp_path / "zero.yaml").write_text(yaml.safe_dump(zero_cfg))
    codes = [
        main(["bands", "--config", str(tmp_path / "sign.yaml")]),
        main(["bayes", "--config", str(tmp_path / "sign.yaml")]),
        main(["bands", "--config", str(tmp_path / "zero.yaml")]),
    ]
    sign = pd.read_csv(tmp_path / "sign" / "bands.csv")
    bayes = pd.read_csv(tmp_path / "sign" / "bayes.csv")
    zero = pd.read_csv(tmp_path / "zero" / "bands.csv")

    straddle = bool(np.all((sign.cs_lo < 0) & (sign.cs_hi > 0)))
    first_two_years = zero[(zero.horizon >= 1) & (zero.horizon <= 8)]
    negative = bool(np.all(first_two_years.cs_hi < 0))
    impact_zero = bool(zero.loc[zero.horizon == 0, ["cs_lo", "cs_hi"]].abs().to_numpy().max() == 0.0)
    width = bayes.fhat_hi - bayes.fhat_lo
    over = np.maximum(bayes.fhat_lo - bayes.bayes_lo, bayes.bayes_hi - bayes.fhat_hi) / width
    inside = bool(np.all(over <= 0.02))
    summary = json.loads((tmp_path / "sign" / "bayes_summary.json").read_text())
    ok = codes == [EXIT_OK] * 3 and straddle and negative and inside
    report(
        9,
        ok,
        f"pure-sign CS^theta straddles 0 at all 24 horizons: {straddle}; "
        f"zero+sign cs_hi < 0 for h=1..8: {negative} (max {first_two_years.cs_hi.max():.3f}, impact fixed at 0: {impact_zero}); "
        f"Bayes band inside Fhat up to 2%: {inside} (max overhang {over.max():.3f}, acceptance {summary['acceptance_rate']:.3f})",
    )
