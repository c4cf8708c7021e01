"""Independent replicas of one particle system, snapshots and checkpoints.

Replica ``r`` uses seed ``config.seed + r``.  Snapshots are taken on the
step grid ``0, stride, 2*stride, ...`` for every replica, so marginal
estimators can pool replicas without interpolation.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, CorruptCheckpoint, NonFiniteState
from .particles import DEFAULT_TILE, SimConfig, batch_step, noise_generator
from .tensorio import canonical_json, content_hash, decode_tensor, encode_tensor, file_hash, write_csv

LAW_KINDS = ("product_gaussian", "tabulated")


@dataclass(frozen=True)
class InitialLaw:
    """One-particle law ``f0``; replicas draw ``f0^{(x)N}``.

    ``product_gaussian``: positions with density ``1 + eps cos(2 pi m x_1)``
    (uniform when ``perturbation = 0``), velocities centred Gaussian with
    standard deviation ``velocity_std``.  ``tabulated``: a k=1
    :class:`~meanfield.marginals.GridDensity`, sampled cell-wise by
    inverse CDF and uniformly inside the cell.
    """

    kind: str = "product_gaussian"
    velocity_std: float = 1.0
    perturbation: float = 0.0
    mode: int = 1
    density: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ConfigError(f"unknown initial law {self.kind!r}")
        if abs(self.perturbation) >= 1:
            raise ConfigError("perturbation must satisfy |eps| < 1")
        if self.kind == "tabulated" and self.density is None:
            raise ConfigError("tabulated law needs a density")

    def to_dict(self):
        out = {"kind": self.kind, "velocity_std": self.velocity_std,
               "perturbation": self.perturbation, "mode": self.mode}
        if self.density is not None:
            out["density_hash"] = self.density.content_hash()
        return out

    @classmethod
    def from_dict(cls, data, density=None):
        data = {k: v for k, v in data.items() if k != "density_hash"}
        return cls(density=density, **data)


def _invert_cosine_cdf(u, eps, m, iters=60):
    """Solve ``x + eps sin(2 pi m x)/(2 pi m) = u`` on [0, 1) by Newton."""
    if eps == 0:
        return u
    x = u.copy()
    w = 2 * math.pi * m
    for _ in range(iters):
        g = x + eps * np.sin(w * x) / w - u
        x = x - g / (1 + eps * np.cos(w * x))
    return np.clip(x, 0.0, np.nextafter(1.0, 0.0))


def sample_initial(law: InitialLaw, N: int, d: int, seed: int, order="second"):
    """Draw ``(positions, velocities)`` for one replica from stream 0 of ``seed``."""
    gen = noise_generator(seed, 0)
    if law.kind == "product_gaussian":
        X = gen.random((N, d))
        X[:, 0] = _invert_cosine_cdf(X[:, 0], law.perturbation, law.mode)
        V = law.velocity_std * gen.standard_normal((N, d)) if order == "second" else None
        return X, V
    return law.density.sample(N, gen, with_velocity=(order == "second"))


@dataclass
class EnsembleDataset:
    """Synchronised snapshots of ``R`` replicas.

    ``positions`` / ``velocities`` have shape ``(R, T, N, d)``; the final
    per-replica state (which may fall between snapshots) is kept so a run
    can be resumed bit-exactly.
    """

    config: SimConfig
    law: InitialLaw
    replica_count: int
    snapshot_steps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray | None
    final_positions: np.ndarray
    final_velocities: np.ndarray | None
    final_step: int

    @property
    def snapshot_times(self):
        return self.snapshot_steps * self.config.dt

    @property
    def seeds(self):
        return [self.config.seed + r for r in range(self.replica_count)]

    @property
    def config_hash(self):
        return content_hash({"config": self.config.to_dict(), "law": self.law.to_dict(),
                             "replicas": self.replica_count})

    def time_index(self, t, atol=1e-12):
        hits = np.nonzero(np.abs(self.snapshot_times - t) <= atol * max(1.0, abs(t)))[0]
        if not hits.size:
            raise ValueError(f"time {t} is not a snapshot time")
        return int(hits[0])

    def snapshot(self, t):
        """Positions and velocities ``(R, N, d)`` at snapshot time ``t``."""
        i = self.time_index(t)
        v = None if self.velocities is None else self.velocities[:, i]
        return self.positions[:, i], v


def _advance(config, X, V, seeds, start, stop, tile, workers):
    """Advance one batch from step ``start`` to ``stop`` collecting snapshots."""
    snaps_x, snaps_v, steps = [], [], []
    if start % config.snapshot_stride == 0:
        snaps_x.append(X.copy())
        snaps_v.append(None if V is None else V.copy())
        steps.append(start)
    for s in range(start, stop):
        X, V = batch_step(X, V, seeds, s, config, tile, workers)
        if (s + 1) % config.snapshot_stride == 0:
            snaps_x.append(X.copy())
            snaps_v.append(None if V is None else V.copy())
            steps.append(s + 1)
    return X, V, snaps_x, snaps_v, steps


def _chunks(R, N, budget=1 << 22):
    size = max(1, budget // max(1, N * N))
    return [(lo, min(lo + size, R)) for lo in range(0, R, size)]


def _run_batches(config, X0, V0, seeds, start, stop, tile, workers, chunk_size):
    R = X0.shape[0]
    bounds = ([(lo, min(lo + chunk_size, R)) for lo in range(0, R, chunk_size)]
              if chunk_size else _chunks(R, config.N))

    def job(b):
        lo, hi = b
        v = None if V0 is None else V0[lo:hi]
        try:
            return _advance(config, X0[lo:hi], v, seeds[lo:hi], start, stop, tile, 1)
        except NonFiniteState as exc:
            exc.replica = lo + (exc.replica or 0)
            raise

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, bounds))
    else:
        results = [job(b) for b in bounds]
    Xf = np.concatenate([r[0] for r in results])
    Vf = None if V0 is None else np.concatenate([r[1] for r in results])
    steps = results[0][4]
    px = np.stack([np.concatenate([r[2][t] for r in results]) for t in range(len(steps))], axis=1) \
        if steps else np.zeros((R, 0) + X0.shape[1:])
    pv = None
    if V0 is not None:
        pv = np.stack([np.concatenate([r[3][t] for r in results]) for t in range(len(steps))], axis=1) \
            if steps else np.zeros((R, 0) + X0.shape[1:])
    return Xf, Vf, px, pv, np.array(steps, dtype=np.int64)


def run_ensemble(config: SimConfig, replicas: int, initial_law: InitialLaw | None = None,
                 workers: int = 1, tile: int = DEFAULT_TILE, chunk_size: int | None = None) -> EnsembleDataset:
    """Draw ``replicas`` i.i.d. initial configurations and evolve each to ``t_end``."""
    if replicas < 1:
        raise ConfigError("replicas must be >= 1")
    law = initial_law or InitialLaw()
    seeds = [config.seed + r for r in range(replicas)]
    draws = [sample_initial(law, config.N, config.d, s, config.order) for s in seeds]
    X0 = np.stack([x for x, _ in draws])
    V0 = None if config.order == "first" else np.stack([v for _, v in draws])
    Xf, Vf, px, pv, steps = _run_batches(config, X0, V0, seeds, 0, config.n_steps, tile, workers, chunk_size)
    return EnsembleDataset(config, law, replicas, steps, px, pv, Xf, Vf, config.n_steps)


def continue_ensemble(dataset: EnsembleDataset, t_end: float, workers: int = 1,
                      tile: int = DEFAULT_TILE, chunk_size: int | None = None) -> EnsembleDataset:
    """Extend a run to a later ``t_end``; bit-identical to running there directly."""
    config = replace(dataset.config, t_end=t_end)
    if config.n_steps < dataset.final_step:
        raise ConfigError("t_end lies before the dataset's final time")
    Xf, Vf, px, pv, steps = _run_batches(
        config, dataset.final_positions, dataset.final_velocities, dataset.seeds,
        dataset.final_step, config.n_steps, tile, workers, chunk_size)
    keep = steps > dataset.final_step
    positions = np.concatenate([dataset.positions, px[:, keep]], axis=1)
    velocities = None if pv is None else np.concatenate([dataset.velocities, pv[:, keep]], axis=1)
    all_steps = np.concatenate([dataset.snapshot_steps, steps[keep]])
    return EnsembleDataset(config, dataset.law, dataset.replica_count, all_steps,
                           positions, velocities, Xf, Vf, config.n_steps)


def truncate_ensemble(dataset: EnsembleDataset, t: float) -> EnsembleDataset:
    """View of the dataset stopped at snapshot time ``t`` (for resume tests)."""
    i = dataset.time_index(t)
    v = None if dataset.velocities is None else dataset.velocities[:, :i + 1].copy()
    config = replace(dataset.config, t_end=float(t))
    return EnsembleDataset(
        config, dataset.law, dataset.replica_count, dataset.snapshot_steps[:i + 1].copy(),
        dataset.positions[:, :i + 1].copy(), v,
        dataset.positions[:, i].copy(), None if v is None else v[:, i].copy(),
        int(dataset.snapshot_steps[i]))


# --------------------------------------------------------------------------
# checkpoint files


def _arrays(dataset):
    out = {"snapshot_steps": dataset.snapshot_steps.astype(float), "positions": dataset.positions,
           "final_positions": dataset.final_positions}
    if dataset.velocities is not None:
        out["velocities"] = dataset.velocities
        out["final_velocities"] = dataset.final_velocities
    if dataset.law.density is not None:
        out["law_density"] = dataset.law.density.values
    return out


def checkpoint(dataset: EnsembleDataset, path) -> str:
    """Write the whole dataset (including resumable state) to one file; returns its sha256."""
    arrays = _arrays(dataset)
    layout = [[name, list(a.shape)] for name, a in arrays.items()]
    payload = np.concatenate([np.ascontiguousarray(a, dtype="<f8").ravel() for a in arrays.values()])
    meta = {
        "kind": "ensemble_checkpoint",
        "config": dataset.config.to_dict(),
        "law": dataset.law.to_dict(),
        "law_density_meta": None if dataset.law.density is None else dataset.law.density.meta(),
        "replica_count": dataset.replica_count,
        "final_step": dataset.final_step,
        "layout": layout,
        "payload_sha256": content_hash_bytes(payload),
        "config_hash": dataset.config_hash,
    }
    blob = encode_tensor(payload, meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return file_hash(path)


def content_hash_bytes(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def restore(path) -> EnsembleDataset:
    """Inverse of :func:`checkpoint`; raises CorruptCheckpoint on any damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    payload, meta = decode_tensor(blob)
    if meta.get("kind") != "ensemble_checkpoint":
        raise CorruptCheckpoint("not an ensemble checkpoint")
    if content_hash_bytes(payload) != meta["payload_sha256"]:
        raise CorruptCheckpoint("payload hash mismatch")
    arrays, pos = {}, 0
    for name, shape in meta["layout"]:
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = payload[pos:pos + n].reshape(shape)
        pos += n
    config = SimConfig.from_dict(meta["config"])
    density = None
    if "law_density" in arrays:
        from .marginals import GridDensity
        density = GridDensity.from_meta(meta["law_density_meta"], arrays["law_density"])
    law = InitialLaw.from_dict(meta["law"], density)
    ds = EnsembleDataset(
        config, law, meta["replica_count"], arrays["snapshot_steps"].astype(np.int64),
        arrays["positions"], arrays.get("velocities"), arrays["final_positions"],
        arrays.get("final_velocities"), meta["final_step"])
    if ds.config_hash != meta["config_hash"]:
        raise CorruptCheckpoint("config hash mismatch")
    return ds


# --------------------------------------------------------------------------
# dataset directory layout: config.json, snapshots/replica_{r}.bin, manifest.json


def snapshot_record(times, positions, velocities):
    """Stack ``(T, N, d)`` positions and velocities into ``(T, N, 2d)``."""
    if velocities is None:
        return np.asarray(positions)
    return np.concatenate([positions, velocities], axis=-1)


def write_snapshot_stream(path, config: SimConfig, times, positions, velocities, extra=None):
    """Binary snapshot stream plus a ``.json`` sidecar holding the SimConfig.

    The tensor has shape ``(T, N, d)`` (first order) or ``(T, N, 2d)``
    with positions in the first ``d`` columns and velocities after them.
    """
    meta = {"times": [float(t) for t in times], "columns": "x" if velocities is None else "x,v",
            "config_hash": config.content_hash(), "d": config.d}
    meta.update(extra or {})
    with open(path, "wb") as fh:
        fh.write(encode_tensor(snapshot_record(times, positions, velocities), meta))
    with open(str(path) + ".json", "w") as fh:
        fh.write(canonical_json(config.to_dict()))


def export_snapshots_csv(path, times, positions, velocities):
    T, N, d = np.shape(positions)
    header = ["time", "particle"] + [f"x{a}" for a in range(d)]
    if velocities is not None:
        header += [f"v{a}" for a in range(d)]
    rows = []
    for t in range(T):
        for i in range(N):
            row = [float(times[t]), i] + list(positions[t, i])
            if velocities is not None:
                row += list(velocities[t, i])
            rows.append(row)
    write_csv(path, header, rows)


def save_dataset(dataset: EnsembleDataset, directory) -> dict:
    os.makedirs(os.path.join(directory, "snapshots"), exist_ok=True)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        fh.write(canonical_json({"sim": dataset.config.to_dict(), "law": dataset.law.to_dict(),
                                 "replicas": dataset.replica_count}))
    files = {}
    times = dataset.snapshot_times
    for r in range(dataset.replica_count):
        rel = f"snapshots/replica_{r}.bin"
        v = None if dataset.velocities is None else dataset.velocities[r]
        write_snapshot_stream(os.path.join(directory, rel), dataset.config, times,
                              dataset.positions[r], v, {"replica": r, "seed": dataset.seeds[r]})
        files[rel] = file_hash(os.path.join(directory, rel))
    state_path = os.path.join(directory, "checkpoint.bin")
    files["checkpoint.bin"] = checkpoint(dataset, state_path)
    files["config.json"] = file_hash(os.path.join(directory, "config.json"))
    manifest = {
        "config_hash": dataset.config_hash,
        "seeds": dataset.seeds,
        "times": [float(t) for t in times],
        "files": files,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        fh.write(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def load_dataset(directory) -> EnsembleDataset:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    for rel, digest in manifest["files"].items():
        if file_hash(os.path.join(directory, rel)) != digest:
            raise CorruptCheckpoint(f"hash mismatch for {rel}")
    return restore(os.path.join(directory, "checkpoint.bin"))
