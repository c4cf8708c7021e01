"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (also collected in the terminal summary).
"""
import math
import time

import numpy as np
import pytest

from meanfield.ensemble import InitialLaw, run_ensemble
from meanfield.errors import NonFiniteState
from meanfield.hierarchy import (binomial_bound_holds, existence_time, final_marginal_bound, induction_bound,
                                 picard_oracle)
from meanfield.kernels import KernelSpec, eval_force, eval_potential, smooth_kernel
from meanfield.marginals import holder_check
from meanfield.particles import SimConfig, batch_energy, batch_min_pair_dist
from meanfield.studies import ChaosStudy, energy_slope_study, run_chaos_study, spatial_self_convergence
from meanfield.vlasov import (cosine_spatial, landau_initial, solve_first_order, solve_vpfp_1d,
                              uniform_gaussian)


def test_criterion_01_kernel_consistency(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    h = 1e-5
    for d in (1, 2, 3):
        specs = [KernelSpec("coulomb", 1.0, d), KernelSpec("mild_power", 1.0, d, exponent=0.5),
                 smooth_kernel(d), KernelSpec("zero", dim=d)]
        for spec in specs:
            r = rng.uniform(-0.5, 0.5, (4000, d))
            # stay clear of the singularity, where FD truncation error blows up
            r = r[np.linalg.norm(r, axis=1) >= 0.1][:1000]
            grad = np.stack([(eval_potential(spec, r + h * e) - eval_potential(spec, r - h * e)) / (2 * h)
                             for e in np.eye(d)], axis=1)
            err = np.linalg.norm(eval_force(spec, r) + grad, axis=1)
            worst[f"{spec.family}-d{d}"] = float(err.max())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 10
    acceptance_log(1, "kernel consistency", ok, f"max error {max(worst.values()):.2e}, {elapsed:.1f}s")
    assert ok, worst


def _energy_drift(dt):
    kernel = smooth_kernel(2)
    cfg = SimConfig(N=64, d=2, sigma=0.0, dt=dt, t_end=1.0, kernel=kernel, seed=7,
                    snapshot_stride=int(round(1.0 / dt)))
    ds = run_ensemble(cfg, 1, InitialLaw(perturbation=0.5))
    e = [batch_energy(ds.positions[:, j], ds.velocities[:, j], kernel)[2][0] for j in (0, -1)]
    p = ds.velocities[0].sum(axis=1)
    return abs(e[1] - e[0]), float(np.max(np.abs(p[-1] - p[0])))


def test_criterion_02_energy_first_order_in_dt(acceptance_log):
    start = time.perf_counter()
    err1, mom1 = _energy_drift(1e-3)
    err2, mom2 = _energy_drift(5e-4)
    ratio = err2 / err1
    elapsed = time.perf_counter() - start
    ok = 0.4 <= ratio <= 0.6 and max(mom1, mom2) <= 1e-10 and elapsed < 60
    acceptance_log(2, "deterministic energy error halves with dt", ok,
                   f"ratio {ratio:.3f}, momentum drift {max(mom1, mom2):.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_ito_energy_slope(acceptance_log):
    start = time.perf_counter()
    res = energy_slope_study(N=32, d=2, sigma=0.5, replicas=2000, t_end=0.5, dt=1e-3, seed=1)
    elapsed = time.perf_counter() - start
    z = abs(res["slope"] - 16.0) / res["slope_stderr"]
    ok = res["expected_slope"] == 16.0 and z <= 3 and elapsed < 300
    acceptance_log(3, "Ito energy slope N d sigma^2", ok,
                   f"slope {res['slope']:.3f} +- {res['slope_stderr']:.3f}, {z:.2f} SE, {elapsed:.0f}s")
    assert ok


def test_criterion_04_collision_floor(acceptance_log):
    start = time.perf_counter()
    kernel = KernelSpec("coulomb", 1.0, 2)
    cfg = SimConfig(N=128, d=2, sigma=0.5, dt=0.005, t_end=0.5, kernel=kernel, seed=100, snapshot_stride=1)
    try:
        ds = run_ensemble(cfg, 20, InitialLaw())
        aborted = False
    except NonFiniteState:
        aborted = True
    margins = []
    if not aborted:
        for j in range(ds.snapshot_steps.size):
            X, V = ds.positions[:, j], ds.velocities[:, j]
            E = batch_energy(X, V, kernel)[2]
            dist = batch_min_pair_dist(X)
            margins.append(np.min(np.log(dist) + cfg.N * E))
    elapsed = time.perf_counter() - start
    ok = not aborted and min(margins) > 0 and elapsed < 600
    acceptance_log(4, "collision floor", ok,
                   f"aborted={aborted}, min log-margin {min(margins) if margins else float('nan'):.3g}, "
                   f"{elapsed:.0f}s")
    assert ok


def test_criterion_05_holder(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    violations = 0
    for i in range(500):
        d = 1 if i % 2 else 2
        n = int(rng.choice([4, 8]))
        slots = 2 if d == 2 else int(rng.integers(2, 4))
        K = np.abs(rng.standard_normal((n,) * d)) ** rng.uniform(0.5, 3)
        f = rng.random((n,) * (d * slots)) ** rng.uniform(0.5, 4)
        if not holder_check(K, f, 1.5, 3.0, d=d).satisfied:
            violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    acceptance_log(5, "Hoelder inequality", ok, f"{violations} violations in 500, {elapsed:.1f}s")
    assert ok


def test_criterion_06_hierarchy_closed_forms(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_ind, worst_fin = -np.inf, -np.inf
    for _ in range(200):
        m = int(rng.integers(1, 20))
        F0 = rng.uniform(0.1, 3.0)
        L = rng.uniform(0.05, 3.0)
        t = rng.uniform(0.01, 1.0)
        tail = rng.uniform(0.1, 3.0) ** (m + 1)
        tr = picard_oracle(m + 1, t, L, F0, tail, J=50_000)
        for k in range(1, m + 1):
            b = induction_bound(k, m, t, F0, L, tr.X(m + 1), tr.times)
            worst_ind = max(worst_ind, (tr.X(k)[-1] - b) / b)
        N = int(rng.integers(2, 21))
        F = rng.uniform(0.1, 3.0)
        T = existence_time(L, F0, F)
        t2 = rng.uniform(0.01, 0.999) * T
        tr = picard_oracle(N, t2, L, F0, F**N, J=50_000)
        for k in range(1, N + 1):
            b = final_marginal_bound(k, N, F0, F, L, t2)
            worst_fin = max(worst_fin, (tr.X(k)[-1] - b) / b)
    binom = binomial_bound_holds(60)
    tstar = existence_time(1.0, 1.0, 1.0)
    elapsed = time.perf_counter() - start
    ok = worst_ind <= 1e-6 and worst_fin <= 1e-6 and binom and tstar == 0.25 and elapsed < 60
    acceptance_log(6, "hierarchy closed forms vs Picard oracle", ok,
                   f"worst excess induction {worst_ind:.1e}, final {worst_fin:.1e}, T*={tstar}, {elapsed:.1f}s")
    assert ok


def test_criterion_07_pde_analytic_checks(acceptance_log):
    start = time.perf_counter()
    zero = KernelSpec("zero", dim=1)
    g = landau_initial(128, 128, 6.0)
    t = 0.25
    out = solve_vpfp_1d(g, zero, 0.0, t, 1 / (128 * 6))
    X, V = np.meshgrid(g.x, g.v, indexing="ij")
    exact = (1 + 0.5 * np.cos(2 * math.pi * (X - V * t))) * np.exp(-V**2 / 2)
    exact /= exact.sum() * g.dx * g.dv
    transport = float(np.abs(out.f - exact).sum() * g.dx * g.dv)

    h = uniform_gaussian(64, 128, 8.0, velocity_std=1.0)
    sigma, th = 0.8, 1.0
    heat = solve_vpfp_1d(h, zero, sigma, th, 1 / (64 * 8))
    var_err = abs(heat.velocity_variance() - (h.velocity_variance() + sigma**2 * th)) / (
        h.velocity_variance() + sigma**2 * th)

    inter = solve_vpfp_1d(landau_initial(128, 128, 6.0), smooth_kernel(1), 1.0, 0.5, 1 / (128 * 6))
    drift_rate = max(out.stats["mass_drift"] / t, heat.stats["mass_drift"] / th, inter.stats["mass_drift"] / 0.5)

    s = cosine_spatial(64, 2, 0.5, 1)
    fo = solve_first_order(s, KernelSpec("zero", dim=2), 0.6, 0.2, 0.01)
    ref = 1 + 0.5 * math.exp(-0.36 * (2 * math.pi) ** 2 * 0.2 / 2) * np.cos(2 * math.pi * s.centers()[0])
    mode_err = float(np.max(np.abs(fo.f - ref)))
    elapsed = time.perf_counter() - start
    ok = transport <= 1e-6 and var_err <= 5e-3 and drift_rate <= 1e-10 and mode_err <= 1e-8 and elapsed < 120
    acceptance_log(7, "PDE analytic checks", ok,
                   f"transport L1 {transport:.1e}, variance rel err {var_err:.1e}, mass drift/t {drift_rate:.1e}, "
                   f"mode err {mode_err:.1e}, {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def chaos_results():
    start = time.perf_counter()
    res = run_chaos_study(ChaosStudy(N_values=[64, 256, 1024], replicas=200, sigma=1.0, t_end=0.5))
    res["elapsed"] = time.perf_counter() - start
    return res


def test_criterion_08_propagation_of_chaos(chaos_results, acceptance_log):
    rows = chaos_results["rows"]
    l1 = [r["l1_k1"] for r in rows]
    l2 = [r["l1_k2"] for r in rows]
    dec = lambda xs: all(b < a for a, b in zip(xs, xs[1:]))
    ok = dec(l1) and dec(l2) and chaos_results["elapsed"] < 1800
    acceptance_log(8, "propagation of chaos d=1", ok,
                   "k=1 L1 " + ", ".join(f"{v:.4f}" for v in l1) + "; k=2 L1 " +
                   ", ".join(f"{v:.4f}" for v in l2) + f"; {chaos_results['elapsed']:.0f}s")
    assert ok


def test_criterion_09_weighted_norm_bounded(chaos_results, acceptance_log):
    rows = chaos_results["rows"]
    norms = [r["weighted_norm_k1"] for r in rows]
    spread = max(norms) / min(norms)
    recursion = all(r["recursion_passed"] for r in rows)
    ok = spread <= 2 and recursion
    acceptance_log(9, "weighted-norm boundedness", ok,
                   f"X_1 at t=0.5: " + ", ".join(f"{v:.4f}" for v in norms) +
                   f"; spread {spread:.3f}; recursion with L={chaos_results['L']:.3g} passed={recursion}")
    assert ok


def test_criterion_10_coulomb_self_convergence(acceptance_log):
    start = time.perf_counter()
    res = spatial_self_convergence([128, 256, 512, 1024], replicas=100, sigma=0.5, t_end=0.25, dt=0.01)
    d = [p["l1"] for p in res["distances"]]
    elapsed = time.perf_counter() - start
    ok = all(b < a for a, b in zip(d, d[1:])) and elapsed < 3600
    acceptance_log(10, "d=2 Coulomb self-convergence", ok,
                   "L1(N,2N) " + ", ".join(f"{v:.4f}" for v in d) + f"; {elapsed:.0f}s")
    assert ok
