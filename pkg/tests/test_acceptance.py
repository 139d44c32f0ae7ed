"""Acceptance criteria, each at its stated tolerance; one PASS/FAIL line apiece.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are repeated
in the "acceptance criteria" section of the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from ladderwalk import closed_form as cf
from ladderwalk import exact_oracle as eo
from ladderwalk import mc_harness as mc
from ladderwalk.closed_form import ModelParams
from ladderwalk.rng import TREE, derive_key
from ladderwalk.tree_sampler import KeyedBlockSource, origin_gap_pmf

GOLDEN_ALPHA = 2 - math.sqrt(3)


@pytest.fixture
def verdict(record_property):
    def report(n, title, passed, detail):
        line = f"AC{n} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        print(line)
        record_property("acceptance", line)
        assert passed, line
    return report


def _chi2(counts, probs):
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(probs, dtype=float) * counts.sum()
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue


def test_ac01_trap_time_exactness(verdict):
    start = time.perf_counter()
    worst = 0.0
    count = 0
    for beta in (1.0, 1.1, 1.5, 2.0, 3.0):
        shapes = [("a", k, 0) for k in range(1, 13)] + [("b", 0, l) for l in range(1, 13)]
        shapes += [("c", k, l) for k in range(13) for l in range(13)]
        for kind, k, l in shapes:
            exact = eo.trap_time(kind, k, l, beta)
            formula = cf.trap_mean_time(kind, beta, k, l)
            worst = max(worst, abs(exact - formula) / abs(formula) if formula else abs(exact))
            count += 1
    elapsed = time.perf_counter() - start
    verdict(1, "trap-time exactness", worst <= 1e-9 and elapsed < 10,
            f"{count} gadgets, max rel err {worst:.2e}, {elapsed:.1f} s")


def _beta_grid(alpha):
    return np.linspace(1.0, 0.95 / alpha, 17)[1:-1]


def test_ac02_speed_formula_vs_simulation(verdict):
    parts = []
    ok = True
    for i, alpha in enumerate((0.15, GOLDEN_ALPHA, 0.5)):
        zs = []
        for j, beta in enumerate(_beta_grid(alpha)):
            p = ModelParams.from_alpha(alpha, beta=float(beta), seed=1000 * i + j)
            est = mc.estimate_speed(p, 10**5, 500)
            zs.append(est.z_score(cf.speed_value(alpha, float(beta))))
        hits = sum(abs(z) <= 3 for z in zs)
        ok &= hits >= 14
        worst = max(zs, key=abs)
        parts.append(f"alpha={alpha:.4f} {hits}/15 (worst z {worst:+.1f})")
    verdict(2, "speed formula vs simulation", ok, "; ".join(parts))


def test_ac03_zero_speed_regime(verdict):
    alpha = GOLDEN_ALPHA
    p = ModelParams.from_alpha(alpha, beta=1.05 / alpha, seed=3)
    est = mc.estimate_speed(p, 10**5, 500)
    ok = abs(est.point) < 3 * est.std_error and est.std_error < 0.005
    verdict(3, "zero-speed regime", ok,
            f"beta={p.beta:.4f}: X/n = {est.point:.5f} +- {est.std_error:.5f} "
            f"(z {est.z_score(0.0):+.1f}), capped fraction {est.capped_fraction}")


def test_ac04_dual_speed_formula(verdict):
    gen = np.random.default_rng(4)
    worst = 0.0
    for _ in range(500):
        alpha = float(gen.uniform(0.01, 0.99))
        beta = float(1.0 + gen.uniform(1e-3, 1 - 1e-3) * (1 / alpha - 1))
        a = cf.inverse_speed_formula(alpha, beta)
        b = cf.expected_tau1(alpha, beta)
        worst = max(worst, abs(a - b) / abs(a))
    verdict(4, "dual speed formula", worst <= 1e-10, f"500 random (alpha, beta), max rel diff {worst:.2e}")


def test_ac05_small_alpha_limits(verdict):
    errs = []
    for beta in (1.5, 2.0, 3.0, 5.0):
        errs.append(abs(cf.speed_value(1e-6, beta) - 2 * (beta - 1) / (5 * beta + 7)))
    h = 1e-6
    slopes = {b: (cf.speed_value(1e-5 + h, b) - cf.speed_value(1e-5 - h, b)) / (2 * h) for b in (2.0, 3.0, 4.0)}
    near_zero = abs(slopes[3.0]) < 0.01 * abs(slopes[2.0])
    ok = max(errs) < 1e-4 and slopes[2.0] > 0 and near_zero and slopes[4.0] < 0
    verdict(5, "small-alpha limits", ok,
            f"max |v - limit| {max(errs):.2e}; dv/dalpha at beta=2,3,4: "
            f"{slopes[2.0]:+.4f}, {slopes[3.0]:+.1e}, {slopes[4.0]:+.4f}")


def test_ac06_quenched_clt(verdict):
    p = ModelParams.from_alpha(GOLDEN_ALPHA, beta=1.0, seed=6)
    rep = mc.clt_experiment(p, 10**5, 10**4, "quenched")
    ok = rep.ks_p_value > 0.01 and 0.95 <= rep.sample_variance <= 1.05
    verdict(6, "quenched CLT / Einstein variance", ok,
            f"KS p={rep.ks_p_value:.3f}, variance ratio {rep.sample_variance:.4f}")


def test_ac07_annealed_clt(verdict):
    p = ModelParams.from_alpha(GOLDEN_ALPHA, beta=1.5, seed=7)
    rep = mc.clt_experiment(p, 10**5, 5000, "annealed")
    verdict(7, "annealed CLT", rep.ks_p_value > 0.01, f"KS p={rep.ks_p_value:.3f}, D={rep.ks_statistic:.4f}")


def test_ac08_escape_bounds(verdict):
    rep = mc.escape_bound_check(ModelParams.from_alpha(0.5, beta=2.0, seed=8), 100, 10**4)
    ok = rep.oracle_in_bounds and rep.max_abs_z() <= 4 and rep.regen_ok(4.0)
    verdict(8, "escape-probability bounds", ok,
            f"oracle in [{min(rep.oracle):.4f}, {max(rep.oracle):.4f}] within [1/6, 1/3]: {rep.oracle_in_bounds}; "
            f"max |z| {rep.max_abs_z():.2f}; min regeneration frequency {min(rep.regen_empirical):.4f} "
            f"vs bound {rep.regen_bound:.4f}")


def test_ac09_ergodic_ray_statistics(verdict):
    worst = 0.0
    for alpha in (0.2, 0.5, 0.8):
        ratio, holding = cf.ray_statistics(alpha)
        emp = mc.ergodic_ray_statistics(alpha, 10**5, seed=9)
        worst = max(worst, abs(emp["ray_ratio"] / ratio - 1), abs(emp["holding_mean"] / holding - 1))
    verdict(9, "ergodic ray statistics", worst < 0.01, f"max relative deviation {worst:.4f}")


def test_ac10_tail_exponent(verdict):
    p = ModelParams.from_alpha(0.5, beta=1.2, seed=10)
    rho = cf.critical_values(0.5, 1.2).rho
    est = mc.trap_tail_exponent(p, 10**5)
    verdict(10, "trap-time tail exponent", abs(est.point / rho - 1) <= 0.15,
            f"Hill {est.point:.3f} +- {est.std_error:.3f} vs rho {rho:.3f}")


def _origin_event_counts(alpha, n, seed):
    counts = {}
    for r in range(n):
        src = KeyedBlockSource(derive_key(seed, TREE, r), alpha)
        o = src.origin()
        w1 = int(src.interior([1])[2][0])
        key = (o.f0_prime, o.f0, -o.v0, int(w1 != o.w0))
        counts[key] = counts.get(key, 0) + 1
    return counts


def test_ac11_structural_suite(verdict):
    notes = []
    ok = True
    # argmax of the closed-form speed above 1/sqrt(alpha)
    alphas = np.linspace(0.02, 0.95, 20)
    above = 0
    convex = 0
    for a in alphas:
        betas = np.linspace(1.0, 1.0 / a, 2002)[1:-1]
        v = np.array([cf.speed_value(a, b) for b in betas])
        above += betas[np.argmax(v)] > 1 / math.sqrt(a)
        inv = 1.0 / v
        second = inv[2:] - 2 * inv[1:-1] + inv[:-2]
        convex += bool(np.all(second >= -1e-9 * inv[1:-1]))
    ok &= above == 20 and convex == 20
    notes.append(f"argmax > beta_c2 for {above}/20, 1/v convex for {convex}/20")

    # geometric law of F
    p_geo = []
    for a in (0.2, 0.5, 0.8):
        f, _, _ = KeyedBlockSource(derive_key(11, TREE, 0), a).interior(np.arange(1, 10**6 + 1))
        k = np.arange(200)
        p_geo.append(_chi2(np.bincount(f, minlength=200)[:200], (1 - a) * a**k))
    # size-biased origin gap
    g0 = np.array([KeyedBlockSource(derive_key(12, TREE, r), 0.5).origin().g0 for r in range(100_000)])
    p_origin = _chi2(np.bincount(g0, minlength=80)[1:80], origin_gap_pmf(0.5, 79))
    # origin events (a, b, k, sigma)
    alpha, n = 0.5, 100_000
    counts = _origin_event_counts(alpha, n, 13)
    events = [(a, b, k, s) for a in range(40) for b in range(40 - a) for k in range(-a, b + 1) for s in (0, 1)]
    probs = np.array([cf.block_probability(alpha, a, b, k, s) for a, b, k, s in events])
    obs = np.array([counts.get((a, b, k, s), 0) for a, b, k, s in events])
    p_event = _chi2(np.append(obs, n - obs.sum()), np.append(probs, max(1 - probs.sum(), 0.0)))
    mass = sum(2 * (a + b + 1) * cf.block_probability(alpha, a, b, 0, 0) for a in range(200) for b in range(200))
    pvals = p_geo + [p_origin, p_event]
    ok &= min(pvals) > 0.01 and abs(mass - 1) < 1e-12
    notes.append("chi2 p geometric " + "/".join(f"{x:.2f}" for x in p_geo)
                 + f", origin gap {p_origin:.2f}, origin events {p_event:.2f}; event mass {mass:.15f}")
    verdict(11, "structural property suite", ok, "; ".join(notes))
