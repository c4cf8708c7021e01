"""Composite experiments shared by the CLI and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import InitialLaw, run_ensemble
from .hierarchy import RecursionTrace, growth_constant, HierarchyParams, lambda_min, lambda_schedule, verify_recursion
from .kernels import KernelSpec, kernel_lp_norm, smooth_kernel
from .marginals import GridSpec, chaos_distance, estimate_marginal, weighted_lq_norm
from .particles import SimConfig, batch_energy
from .vlasov import landau_initial, solve_vpfp_1d, tensorize


@dataclass
class ChaosStudy:
    N_values: list = field(default_factory=lambda: [64, 256, 1024])
    replicas: int = 200
    sigma: float = 1.0
    t_end: float = 0.5
    dt: float = 0.005
    snapshot_stride: int = 20
    perturbation: float = 0.5
    velocity_std: float = 1.0
    kernel: KernelSpec = field(default_factory=lambda: smooth_kernel(1))
    seed: int = 0
    grid1: GridSpec = field(default_factory=lambda: GridSpec(64, 64, 6.0))
    grid2: GridSpec = field(default_factory=lambda: GridSpec(8, 8, 6.0))
    pde_nx: int = 128
    pde_nv: int = 256
    pde_v_max: float = 8.0
    q: float = 2.0
    p: float = 2.0
    Lambda: float | None = None

    def to_dict(self):
        return {
            "N_values": list(self.N_values), "replicas": self.replicas, "sigma": self.sigma,
            "t_end": self.t_end, "dt": self.dt, "snapshot_stride": self.snapshot_stride,
            "perturbation": self.perturbation, "velocity_std": self.velocity_std,
            "kernel": self.kernel.to_dict(), "seed": self.seed,
            "grid1": vars(self.grid1), "grid2": vars(self.grid2),
            "pde_nx": self.pde_nx, "pde_nv": self.pde_nv, "pde_v_max": self.pde_v_max,
            "q": self.q, "p": self.p, "Lambda": self.Lambda,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "kernel" in data:
            data["kernel"] = KernelSpec.from_dict(data["kernel"])
        for g in ("grid1", "grid2"):
            if g in data:
                data[g] = GridSpec(**data[g])
        return cls(**data)


def pde_reference(study: ChaosStudy):
    f0 = landau_initial(study.pde_nx, study.pde_nv, study.pde_v_max, study.perturbation, 1,
                        study.velocity_std)
    dt = 1.0 / (study.pde_nx * study.pde_v_max)
    return solve_vpfp_1d(f0, study.kernel, study.sigma, study.t_end, dt)


def run_chaos_study(study: ChaosStudy, workers: int = 1, reference=None, progress=None) -> dict:
    """Empirical k=1 and k=2 marginals against the grid solution, for each N.

    Also records the weighted norms ``X_1, X_2`` at every snapshot
    (``q``, ``lambda(t)`` with ``Lambda`` defaulting to the admissible
    minimum) and checks the hierarchy recursion along them.
    """
    ref = reference or pde_reference(study)
    ref1 = tensorize(ref, 1, study.grid1)
    ref2 = tensorize(ref, 2, study.grid2)
    Lam = study.Lambda or lambda_min(study.q, study.sigma)
    knorm = kernel_lp_norm(study.kernel, study.p)
    params = HierarchyParams(q=study.q, p=study.p, d=1, sigma=study.sigma, Lambda=Lam, K_lp_norm=knorm)
    L = growth_constant(params)
    law = InitialLaw(velocity_std=study.velocity_std, perturbation=study.perturbation)
    rows = []
    for N in study.N_values:
        cfg = SimConfig(N=N, d=1, sigma=study.sigma, dt=study.dt, t_end=study.t_end,
                        kernel=study.kernel, seed=study.seed, snapshot_stride=study.snapshot_stride)
        ds = run_ensemble(cfg, study.replicas, law, workers=workers)
        t_final = float(ds.snapshot_times[-1])
        f1 = estimate_marginal(ds, 1, t_final, study.grid1)
        f2 = estimate_marginal(ds, 2, t_final, study.grid2)
        d1 = chaos_distance(f1, ref1, study.q)
        d2 = chaos_distance(f2, ref2, study.q)
        times = ds.snapshot_times
        X = np.zeros((2, times.size))
        for j, t in enumerate(times):
            lam = lambda_schedule(Lam, float(t))
            X[0, j] = weighted_lq_norm(estimate_marginal(ds, 1, float(t), study.grid1), study.q, lam).value
            X[1, j] = weighted_lq_norm(estimate_marginal(ds, 2, float(t), study.grid2), study.q, lam,
                                       study.kernel, N=N).value
        report = verify_recursion(RecursionTrace(times, X, 1, L), rel_tol=0.10)
        _, _, energy = batch_energy(ds.positions[:, -1], ds.velocities[:, -1], study.kernel)
        rows.append({
            "N": N, "l1_k1": d1["l1"], "lq_k1": d1["lq"], "l1_k2": d2["l1"], "lq_k2": d2["lq"],
            "weighted_norm_k1": float(X[0, -1]), "weighted_norm_k2": float(X[1, -1]),
            "recursion_passed": report.passed, "recursion_worst": report.worst(),
            "trace_times": times.tolist(), "trace": X.tolist(),
            "mean_energy_per_particle": float(np.mean(energy) / N),
        })
        if progress:
            progress(rows[-1])
    return {"rows": rows, "L": L, "Lambda": Lam, "K_lp_norm": knorm, "reference": ref,
            "reference_mass_drift": ref.stats["mass_drift"]}


def spatial_self_convergence(N_values, replicas=100, sigma=0.5, t_end=0.25, dt=0.01, bins=16,
                             kernel: KernelSpec | None = None, perturbation=0.5, seed=0,
                             workers=1, progress=None) -> dict:
    """L1 distances between spatial k=1 marginals of consecutive particle numbers."""
    kernel = kernel or KernelSpec("coulomb", 1.0, 2)
    law = InitialLaw(perturbation=perturbation)
    grid = GridSpec(bins, bins, 1.0, spatial=True)
    dens = {}
    for N in N_values:
        cfg = SimConfig(N=N, d=kernel.dim, sigma=sigma, dt=dt, t_end=t_end, kernel=kernel,
                        seed=seed, snapshot_stride=max(1, int(round(t_end / dt))))
        ds = run_ensemble(cfg, replicas, law, workers=workers)
        dens[N] = estimate_marginal(ds, 1, float(ds.snapshot_times[-1]), grid)
        if progress:
            progress(N)
    pairs = []
    for a, b in zip(N_values, N_values[1:]):
        pairs.append({"N": a, "N_next": b, "l1": chaos_distance(dens[a], dens[b])["l1"]})
    return {"distances": pairs, "densities": dens}


def energy_slope_study(N=32, d=2, sigma=0.5, replicas=2000, t_end=0.5, dt=1e-3,
                       kernel: KernelSpec | None = None, seed=0, workers=1) -> dict:
    """Ensemble-mean energy change against the Ito drift ``N d sigma^2``."""
    kernel = kernel or smooth_kernel(d)
    cfg = SimConfig(N=N, d=d, sigma=sigma, dt=dt, t_end=t_end, kernel=kernel, seed=seed,
                    snapshot_stride=max(1, int(round(t_end / dt)) // 10))
    ds = run_ensemble(cfg, replicas, InitialLaw(), workers=workers)
    e = np.stack([batch_energy(ds.positions[:, j], ds.velocities[:, j], kernel)[2]
                  for j in range(ds.snapshot_steps.size)], axis=1)
    de = e - e[:, :1]
    times = ds.snapshot_times
    mean = de.mean(axis=0)
    slope = float(mean[-1] / times[-1])
    se = float(de[:, -1].std(ddof=1) / math.sqrt(replicas) / times[-1])
    return {"times": times.tolist(), "mean_change": mean.tolist(),
            "stderr": (de.std(axis=0, ddof=1) / math.sqrt(replicas)).tolist(),
            "slope": slope, "slope_stderr": se, "expected_slope": N * d * sigma**2,
            "initial_mean_energy": float(e[:, 0].mean())}
