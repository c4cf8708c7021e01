"""Histogram estimates of k-particle marginals and weighted functionals.

A :class:`GridDensity` of order ``k`` lives on ``k`` copies of the phase
cell ``[0,1)^d x [-v_max, v_max)^d`` (or of ``[0,1)^d`` alone for spatial
marginals).  Axes are ordered slot by slot, positions before velocities::

    (x_1 axes, v_1 axes, x_2 axes, v_2 axes, ...)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ExponentViolation, GridMismatch, GridTooCoarse, WeightOverflow
from .kernels import KernelSpec, eval_potential, minimum_image
from .tensorio import content_hash, read_tensor, write_csv, write_tensor

MAX_PAIR_TUPLES = 4096
# largest exponent we allow inside exp() on an occupied cell
EXP_LIMIT = 700.0
_TUPLE_KEY = 0x7A11_5EED


@dataclass(frozen=True)
class GridSpec:
    x_bins: int = 64
    v_bins: int = 64
    v_max: float = 6.0
    spatial: bool = False

    def check(self):
        if self.x_bins < 4 or (not self.spatial and self.v_bins < 4):
            raise GridTooCoarse(f"every axis needs >= 4 bins, got x={self.x_bins} v={self.v_bins}")
        if not self.spatial and self.v_max <= 0:
            raise ValueError("v_max must be positive")


@dataclass
class GridDensity:
    k: int
    d: int
    x_bins: int
    v_bins: int
    v_max: float
    values: np.ndarray
    truncation_mass: float = 0.0
    spatial: bool = False
    n_particles: int | None = None
    time: float = 0.0
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    # geometry ---------------------------------------------------------------
    @property
    def dx(self):
        return 1.0 / self.x_bins

    @property
    def dv(self):
        return 2.0 * self.v_max / self.v_bins

    @property
    def slot_shape(self):
        return (self.x_bins,) * self.d + (() if self.spatial else (self.v_bins,) * self.d)

    @property
    def slot_volume(self):
        return self.dx**self.d * (1.0 if self.spatial else self.dv**self.d)

    @property
    def cell_volume(self):
        return self.slot_volume**self.k

    @property
    def grid(self):
        return GridSpec(self.x_bins, self.v_bins, self.v_max, self.spatial)

    def x_centers(self):
        return (np.arange(self.x_bins) + 0.5) * self.dx

    def v_centers(self):
        return -self.v_max + (np.arange(self.v_bins) + 0.5) * self.dv

    def mass(self):
        return float(self.values.sum() * self.cell_volume)

    def same_grid(self, other):
        return (self.k, self.d, self.x_bins, self.v_bins, self.spatial) == \
            (other.k, other.d, other.x_bins, other.v_bins, other.spatial) and \
            (self.spatial or math.isclose(self.v_max, other.v_max, rel_tol=1e-12))

    # manipulation -----------------------------------------------------------
    def marginal(self, keep=1):
        """Integrate out all slots after the first ``keep``."""
        n = len(self.slot_shape)
        axes = tuple(range(n * keep, n * self.k))
        vals = self.values.sum(axis=axes) * self.slot_volume ** (self.k - keep)
        return replace(self, k=keep, values=vals)

    def position_marginal(self):
        """Integrate out the velocities of every slot."""
        if self.spatial:
            return self
        n = 2 * self.d
        axes = tuple(s * n + self.d + a for s in range(self.k) for a in range(self.d))
        vals = self.values.sum(axis=axes) * self.dv ** (self.d * self.k)
        return replace(self, values=vals, spatial=True)

    def scaled(self, c):
        return replace(self, values=self.values * c)

    def sample(self, n, gen, with_velocity=True):
        """Draw ``n`` points from a k=1 density by inverse CDF over cells."""
        if self.k != 1:
            raise ValueError("sampling is only defined for k=1 densities")
        p = self.values.ravel() * self.cell_volume
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        cells = np.searchsorted(cdf, gen.random(n), side="right")
        cells = np.minimum(cells, p.size - 1)
        idx = np.unravel_index(cells, self.values.shape)
        jitter = gen.random((n, len(self.slot_shape)))
        X = np.stack([(idx[a] + jitter[:, a]) * self.dx for a in range(self.d)], axis=1)
        if self.spatial or not with_velocity:
            V = None if not with_velocity else np.zeros_like(X)
            return X, V
        V = np.stack([-self.v_max + (idx[self.d + a] + jitter[:, self.d + a]) * self.dv
                      for a in range(self.d)], axis=1)
        return X, V

    # serialisation ----------------------------------------------------------
    def meta(self):
        return {"k": self.k, "d": self.d, "x_bins": self.x_bins, "v_bins": self.v_bins,
                "v_max": self.v_max, "truncation_mass": self.truncation_mass,
                "spatial": self.spatial, "n_particles": self.n_particles,
                "time": self.time, "provenance": self.provenance}

    @classmethod
    def from_meta(cls, meta, values):
        keys = ("k", "d", "x_bins", "v_bins", "v_max", "truncation_mass", "spatial",
                "n_particles", "time", "provenance")
        return cls(values=np.asarray(values, dtype=float), **{k: meta[k] for k in keys})

    def content_hash(self):
        import hashlib
        h = hashlib.sha256(content_hash(self.meta()).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path):
        meta = self.meta()
        meta["kind"] = "grid_density"
        write_tensor(path, self.values, meta)

    @classmethod
    def load(cls, path):
        arr, meta = read_tensor(path)
        return cls.from_meta(meta, arr)

    def export_slice_csv(self, path, fixed=None):
        """Write a 2D slice: first two axes vary, all others at ``fixed`` indices."""
        vals = self.values
        if vals.ndim > 2:
            idx = tuple(fixed or [s // 2 for s in vals.shape[2:]])
            vals = vals[(slice(None), slice(None)) + idx]
        rows = [[i, j, float(vals[i, j])] for i in range(vals.shape[0]) for j in range(vals.shape[1])]
        write_csv(path, ["i", "j", "value"], rows)


# --------------------------------------------------------------------------
# estimation


def pair_tuples(N, limit=MAX_PAIR_TUPLES):
    """Ordered pairs ``(i, j)``, ``i != j``: all of them if at most ``limit``,
    otherwise a fixed pseudo-random subset of size ``limit``."""
    total = N * (N - 1)
    if total <= limit:
        idx = np.arange(total)
    else:
        gen = np.random.Generator(np.random.Philox(key=_TUPLE_KEY, counter=[0, 0, 0, N]))
        idx = np.sort(gen.choice(total, size=limit, replace=False))
    i = idx // (N - 1)
    jj = idx % (N - 1)
    j = jj + (jj >= i)
    return i, j


def _bin_index(coords, d, grid):
    """Flat cell index per row of ``coords`` (columns: x then v per slot) and validity mask."""
    x_bins, v_bins, v_max = grid.x_bins, grid.v_bins, grid.v_max
    dv = 2 * v_max / v_bins
    per_slot = d if grid.spatial else 2 * d
    k = coords.shape[1] // per_slot
    idx = []
    ok = np.ones(coords.shape[0], dtype=bool)
    for s in range(k):
        base = s * per_slot
        for a in range(d):
            ix = np.floor(coords[:, base + a] * x_bins).astype(np.int64)
            idx.append(np.clip(ix, 0, x_bins - 1))
        if not grid.spatial:
            for a in range(d):
                iv = np.floor((coords[:, base + d + a] + v_max) / dv).astype(np.int64)
                ok &= (iv >= 0) & (iv < v_bins)
                idx.append(np.clip(iv, 0, v_bins - 1))
    shape = (((x_bins,) * d + (() if grid.spatial else (v_bins,) * d)) * k)
    return np.ravel_multi_index(idx, shape), ok, shape


def histogram(X, V, k, grid: GridSpec, n_particles=None, time=0.0):
    """Pooled histogram of ``k``-tuples from positions/velocities ``(R, N, d)``."""
    grid.check()
    if k not in (1, 2):
        raise ValueError("only k = 1 and k = 2 marginals are supported")
    X = np.asarray(X, dtype=float)
    R, N, d = X.shape
    if not grid.spatial and V is None:
        raise ValueError("velocity marginals need velocities")
    slot = X if grid.spatial else np.concatenate([X, V], axis=-1)
    if k == 1:
        coords = slot.reshape(R * N, -1)
    else:
        if N < 2:
            raise ValueError("k = 2 needs at least two particles")
        i, j = pair_tuples(N)
        coords = np.concatenate([slot[:, i], slot[:, j]], axis=-1).reshape(R * i.size, -1)
    flat, ok, shape = _bin_index(coords, d, grid)
    counts = np.bincount(flat[ok], minlength=int(np.prod(shape))).reshape(shape)
    samples = coords.shape[0]
    dens = GridDensity(k, d, grid.x_bins, grid.v_bins, grid.v_max, np.zeros(shape),
                       spatial=grid.spatial, n_particles=n_particles or N, time=time)
    dens.values = counts / (samples * dens.cell_volume)
    dens.truncation_mass = float(samples - ok.sum()) / samples
    return dens


def estimate_marginal(dataset, k: int, time: float, grid: GridSpec | None = None) -> GridDensity:
    """Histogram estimate of ``f_{k,N}`` at a snapshot time, pooled over replicas."""
    grid = grid or GridSpec()
    X, V = dataset.snapshot(time)
    if dataset.config.order == "first" and not grid.spatial:
        raise ValueError("first-order datasets only support spatial marginals")
    dens = histogram(X, V, k, grid, dataset.config.N, float(time))
    dens.provenance = dataset.config_hash
    return dens


# --------------------------------------------------------------------------
# weighted functionals


def _slot_axes_values(f: GridDensity):
    """Per-slot broadcastable arrays of ``sum |v|^2`` and of x-center coordinates."""
    n_axes = len(f.slot_shape)
    total_axes = n_axes * f.k
    vsq = np.zeros([1] * total_axes)
    xs = []
    for s in range(f.k):
        coords = []
        for a in range(f.d):
            shape = [1] * total_axes
            shape[s * n_axes + a] = f.x_bins
            coords.append(f.x_centers().reshape(shape))
        xs.append(coords)
        if not f.spatial:
            for a in range(f.d):
                shape = [1] * total_axes
                shape[s * n_axes + f.d + a] = f.v_bins
                vsq = vsq + (f.v_centers() ** 2).reshape(shape)
    return vsq, xs


def energy_weight(f: GridDensity, kernel: KernelSpec | None = None, N=None):
    """``e_k`` at cell centres: ``sum_i (1+|v_i|^2) + (1/N) sum_{i,j<=k} phi(x_i-x_j)``.

    For ``k = 1`` the pair sum is ``phi(0) = 0``.
    """
    if f.spatial:
        raise ValueError("the energy weight needs velocity axes")
    vsq, xs = _slot_axes_values(f)
    e = f.k + vsq
    if f.k >= 2 and kernel is not None and kernel.family != "zero":
        N = N or f.n_particles
        if not N:
            raise ValueError("the pair term needs the particle count N")
        pair = 0.0
        for s in range(f.k):
            for t in range(f.k):
                if s == t:
                    continue
                disp = np.stack(np.broadcast_arrays(*[xs[s][a] - xs[t][a] for a in range(f.d)]), -1)
                phi = eval_potential(kernel, minimum_image(disp).reshape(-1, f.d)).reshape(disp.shape[:-1])
                pair = pair + phi
        e = e + pair / N
    return np.broadcast_to(e, f.values.shape)


@dataclass(frozen=True)
class WeightedNormReport:
    q: float
    lam: float
    value: float
    gaussian_moment: float
    truncation_mass: float


def _guard(exponent, occupied):
    if occupied.any() and float(np.max(np.where(occupied, exponent, -np.inf))) > EXP_LIMIT:
        raise WeightOverflow("exponential weight exceeds the float range on an occupied cell")


def gaussian_moment(f: GridDensity, beta: float) -> float:
    """Midpoint quadrature of ``exp(beta sum_i |v_i|^2) f``."""
    if f.spatial:
        raise ValueError("the Gaussian moment needs velocity axes")
    vsq, _ = _slot_axes_values(f)
    expo = np.broadcast_to(beta * vsq, f.values.shape)
    _guard(expo, f.values != 0)
    return float(np.sum(f.values * np.exp(np.minimum(expo, EXP_LIMIT))) * f.cell_volume)


def weighted_lq_norm(f: GridDensity, q: float, lam: float, kernel: KernelSpec | None = None,
                     beta: float | None = None, N=None) -> WeightedNormReport:
    """``int |f|^q exp(lam e_k)`` by midpoint quadrature on the grid."""
    if q < 1 or lam < 0:
        raise ValueError("need q >= 1 and lam >= 0")
    e = energy_weight(f, kernel, N)
    expo = lam * e
    _guard(expo, f.values != 0)
    value = float(np.sum(np.abs(f.values) ** q * np.exp(np.minimum(expo, EXP_LIMIT))) * f.cell_volume)
    gm = gaussian_moment(f, lam if beta is None else beta)
    return WeightedNormReport(q=q, lam=lam, value=value, gaussian_moment=gm,
                              truncation_mass=f.truncation_mass)


# --------------------------------------------------------------------------
# Hoelder regularisation check


def _lp(values, p, measure):
    a = np.abs(values)
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    return float(np.sum(a**p) * measure) ** (1.0 / p)


@dataclass(frozen=True)
class HolderResult:
    lhs: float
    rhs: float
    satisfied: bool


def holder_check(kernel_grid, f, p: float, q: float, d: int | None = None) -> HolderResult:
    """Check ``|| int K(x_1 - y) f(., y) dy ||_q <= ||K||_p ||f||_q`` on a grid.

    ``kernel_grid`` holds ``|K|`` (or a vector field, whose norm is taken)
    at displacements ``i/n``; ``f`` is a spatial density of order ``k+1``
    with ``n`` cells per axis (a spatial :class:`GridDensity` or an array
    of shape ``(n,)*(d*(k+1))``).  All norms use the same counting measure
    ``n^-d`` per axis group, so the discrete inequality is exact.
    """
    if 1.0 / p + 1.0 / q > 1.0 + 1e-15:
        raise ExponentViolation(f"1/p + 1/q = {1/p + 1/q} > 1")
    K = np.asarray(kernel_grid, dtype=float)
    if isinstance(f, GridDensity):
        if not f.spatial:
            f = f.position_marginal()
        d = f.d
        F = f.values
    else:
        F = np.asarray(f, dtype=float)
        if d is None:
            raise ValueError("pass d for raw arrays")
    n = F.shape[0]
    if K.ndim == d + 1:
        K = np.sqrt(np.sum(K * K, axis=0))
    if K.shape != (n,) * d:
        raise GridMismatch("kernel grid and density grid differ")
    slots = F.ndim // d
    if slots < 2 or F.ndim % d:
        raise GridMismatch("density must have order k+1 >= 2")
    h = 1.0 / n**d
    # Kmat[x, y] = |K|(x - y) on the periodic grid
    idx = np.indices((n,) * (2 * d))
    diff = tuple((idx[a] - idx[d + a]) % n for a in range(d))
    Kmat = K[diff]
    # move the first slot (x_1) and the last slot (y) to the front
    F2 = np.moveaxis(F, list(range(d)) + list(range(F.ndim - d, F.ndim)), list(range(2 * d)))
    rest = F2.shape[2 * d:]
    F2 = F2.reshape((n**d, n**d, -1))
    G = np.einsum("xy,xyr->xr", Kmat.reshape(n**d, n**d), F2, optimize=False) * h
    hk = h ** (slots - 1)
    lhs = _lp(G, q, hk)
    rhs = _lp(K, p, h) * _lp(F, q, h**slots)
    return HolderResult(lhs=lhs, rhs=rhs, satisfied=bool(lhs <= rhs * (1 + 1e-9)))


# --------------------------------------------------------------------------
# distances


def chaos_distance(empirical: GridDensity, reference: GridDensity, q: float = 2.0,
                   lam: float = 0.0, kernel: KernelSpec | None = None) -> dict:
    """Grid L1, L^q and ``e_k``-weighted L^q distances between two densities."""
    if not empirical.same_grid(reference):
        raise GridMismatch("densities live on different grids")
    diff = np.abs(empirical.values - reference.values)
    vol = empirical.cell_volume
    l1 = float(diff.sum() * vol)
    lq = float(np.sum(diff**q) * vol) ** (1.0 / q)
    if empirical.spatial:
        wq = lq
    else:
        expo = lam * energy_weight(empirical, kernel)
        _guard(expo, diff != 0)
        wq = float(np.sum(diff**q * np.exp(np.minimum(expo, EXP_LIMIT))) * vol) ** (1.0 / q)
    return {"l1": l1, "lq": lq, "weighted_lq": wq}


def tensor_power(f: GridDensity, k: int) -> GridDensity:
    """``f^{(x)k}`` on the k-fold grid."""
    if f.k != 1:
        raise ValueError("tensorisation starts from a k=1 density")
    vals = f.values
    out = vals
    for _ in range(k - 1):
        out = np.multiply.outer(out, vals)
    return replace(f, k=k, values=out, truncation_mass=1.0 - (1.0 - f.truncation_mass) ** k)
