import math

import numpy as np
import pytest

from meanfield.errors import ConfigError, NonFiniteState
from meanfield.kernels import KernelSpec, eval_force, eval_potential, smooth_kernel
from meanfield.particles import (ParticleState, SimConfig, batch_forces, batch_potential, compute_forces,
                                 displayed_energy_slope, energy_report, expected_energy_slope, simulate,
                                 step, step_noise, total_momentum)

KERNELS = [
    KernelSpec("coulomb", 1.0, 1),
    KernelSpec("coulomb", 1.0, 2),
    KernelSpec("coulomb", 1.0, 3),
    KernelSpec("mild_power", 1.0, 2, exponent=0.8),
    smooth_kernel(2),
]


def naive_forces(X, spec):
    N = len(X)
    F = np.zeros_like(X)
    for i in range(N):
        for j in range(N):
            if i != j:
                F[i] += eval_force(spec, X[i] - X[j])
    return F / N


def naive_potential(X, spec):
    N = len(X)
    return sum(eval_potential(spec, X[i] - X[j]) for i in range(N) for j in range(N) if i != j) / N


@pytest.mark.parametrize("spec", KERNELS, ids=lambda s: f"{s.family}-d{s.dim}")
def test_forces_and_potential_match_double_loop(spec):
    X = np.random.default_rng(2).random((24, spec.dim))
    np.testing.assert_allclose(compute_forces(X, spec), naive_forces(X, spec), rtol=1e-10, atol=1e-10)
    assert batch_potential(X[None], spec)[0] == pytest.approx(naive_potential(X, spec), rel=1e-10)


def test_forces_independent_of_tile_and_workers():
    spec = KernelSpec("coulomb", 1.0, 2)
    X = np.random.default_rng(3).random((2, 300, 2))
    ref = batch_forces(X, spec, tile=300)
    assert np.array_equal(ref, batch_forces(X, spec, tile=7))
    assert np.array_equal(ref, batch_forces(X, spec, tile=64, workers=3))
    assert np.array_equal(ref[1], batch_forces(X[1:], spec, tile=300)[0])


def _state(N=32, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return ParticleState(rng.random((N, d)), rng.standard_normal((N, d)), seed=seed)


def test_noise_is_counter_based():
    a = step_noise(7, 3, 5, 2)
    assert np.array_equal(a, step_noise(7, 3, 5, 2))
    assert not np.array_equal(a, step_noise(7, 4, 5, 2))
    assert not np.array_equal(a, step_noise(8, 3, 5, 2))


def test_simulate_is_deterministic_and_restartable():
    cfg = SimConfig(N=32, d=2, sigma=0.5, dt=0.01, t_end=0.1, kernel=smooth_kernel(2), seed=4)
    s0 = _state(seed=4)
    full, snaps = simulate(cfg, s0)
    again, _ = simulate(cfg, s0)
    assert np.array_equal(full.positions, again.positions)
    half, _ = simulate(cfg, s0, n_steps=5)
    rest, _ = simulate(cfg, half)
    assert np.array_equal(rest.positions, full.positions)
    assert np.array_equal(rest.velocities, full.velocities)
    assert len(snaps) == 11 and full.step == 10
    assert np.all((full.positions >= 0) & (full.positions < 1))


def test_momentum_conserved_without_noise():
    for spec in (smooth_kernel(2), KernelSpec("coulomb", 1.0, 2)):
        cfg = SimConfig(N=40, d=2, sigma=0.0, dt=1e-3, t_end=0.05, kernel=spec)
        s0 = _state(40)
        p0 = total_momentum(s0)
        final, _ = simulate(cfg, s0)
        assert np.max(np.abs(total_momentum(final) - p0)) < 1e-10


def test_first_order_step():
    cfg = SimConfig(N=16, d=2, sigma=0.3, dt=0.01, t_end=0.1, kernel=smooth_kernel(2), order="first")
    s = ParticleState(np.random.default_rng(0).random((16, 2)), None)
    out = step(s, cfg)
    assert out.velocities is None and out.step == 1
    with pytest.raises(ConfigError):
        expected_energy_slope(cfg)


def test_nan_aborts_with_snapshot():
    cfg = SimConfig(N=8, d=1, sigma=0.0, dt=0.01, t_end=0.1, kernel=smooth_kernel(1))
    s = ParticleState(np.random.default_rng(0).random((8, 1)), np.zeros((8, 1)))
    s.velocities[3, 0] = np.nan
    with pytest.raises(NonFiniteState) as info:
        step(s, cfg)
    assert info.value.step == 1
    assert info.value.snapshot["positions"].shape == (8, 1)


def test_energy_report_and_floor():
    spec = KernelSpec("coulomb", 1.0, 2)
    s = _state(16)
    rep = energy_report(s, spec)
    assert rep.kinetic == pytest.approx(16 + np.sum(s.velocities**2))
    assert rep.total == pytest.approx(rep.kinetic + rep.potential)
    assert rep.log_collision_floor == pytest.approx(-16 * rep.total)
    assert rep.floor_respected()
    assert rep.collision_floor == 0.0          # e^{-N E} underflows; compared in log space


def test_energy_slopes():
    cfg = SimConfig(N=32, d=2, sigma=0.5, dt=0.01, t_end=1.0, kernel=smooth_kernel(2))
    assert expected_energy_slope(cfg) == 16.0
    assert displayed_energy_slope(cfg) == 0.25


def test_config_validation_and_roundtrip():
    cfg = SimConfig(N=4, d=2, sigma=0.1, dt=0.1, t_end=1.0, kernel=smooth_kernel(2), seed=9)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.n_steps == 10
    with pytest.raises(ConfigError):
        SimConfig(N=4, d=1, sigma=0.1, dt=0.1, t_end=1.0, kernel=smooth_kernel(2))
    with pytest.raises(ConfigError):
        SimConfig(N=4, d=2, sigma=0.1, dt=-0.1, t_end=1.0, kernel=smooth_kernel(2))


def test_exchangeability_without_noise():
    cfg = SimConfig(N=20, d=2, sigma=0.0, dt=0.01, t_end=0.1, kernel=KernelSpec("coulomb", 1.0, 2))
    s = _state(20)
    perm = np.random.default_rng(1).permutation(20)
    a, _ = simulate(cfg, s)
    b, _ = simulate(cfg, ParticleState(s.positions[perm], s.velocities[perm]))
    np.testing.assert_allclose(b.positions, a.positions[perm], atol=1e-12)


def test_single_particle_energy_slope_monte_carlo():
    from meanfield.studies import energy_slope_study
    res = energy_slope_study(N=1, d=2, sigma=1.0, replicas=10_000, t_end=0.2, dt=0.01, seed=3)
    assert res["expected_slope"] == 2.0
    assert abs(res["slope"] - 2.0) <= 3 * res["slope_stderr"]
    cfg = SimConfig(N=4, d=1, sigma=0.0, dt=0.1, t_end=1.0, kernel=smooth_kernel(1))
    assert expected_energy_slope(cfg) == 0.0
