"""Grid solvers for the limiting equations.

Kinetic, ``d = 1``::

    f_t + v f_x + E(x) f_v = (sigma^2/2) f_vv,     E = K * rho,  rho = int f dv

First order, ``d = 1, 2`` (continuity form)::

    f_t + div(E f) = (sigma^2/2) lap f,            E = K * f

Grid values are point values at cell centres ``x_i = (i + 1/2)/n`` and
``v_j = -v_max + (j + 1/2) dv``; mass is ``sum f * cell``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .errors import CFLViolation, ConfigError, GridMismatch, NegativeOvershoot
from .kernels import KernelSpec, _mode_arrays, ewald_params, tabulate_force
from .marginals import GridDensity, GridSpec

OVERSHOOT_TOL = 1e-6


def _is_pow2(n):
    return n >= 2 and n & (n - 1) == 0


@dataclass
class PhaseGrid1D:
    nx: int
    nv: int
    v_max: float
    f: np.ndarray
    time: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (_is_pow2(self.nx) and _is_pow2(self.nv)):
            raise ConfigError("nx and nv must be powers of two")
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (self.nx, self.nv):
            raise ConfigError(f"f has shape {self.f.shape}, expected {(self.nx, self.nv)}")

    @property
    def dx(self):
        return 1.0 / self.nx

    @property
    def dv(self):
        return 2.0 * self.v_max / self.nv

    @property
    def x(self):
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def v(self):
        return -self.v_max + (np.arange(self.nv) + 0.5) * self.dv

    def mass(self):
        return float(self.f.sum() * self.dx * self.dv)

    def density(self):
        return self.f.sum(axis=1) * self.dv

    def velocity_variance(self):
        w = self.f.sum(axis=0)
        mean = np.dot(w, self.v) / w.sum()
        return float(np.dot(w, (self.v - mean) ** 2) / w.sum())

    def copy(self):
        return replace(self, f=self.f.copy(), stats=dict(self.stats))


@dataclass
class SpatialGrid:
    n: int
    d: int
    f: np.ndarray
    time: float = 0.0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if not _is_pow2(self.n):
            raise ConfigError("n must be a power of two")
        if self.d not in (1, 2):
            raise ConfigError("the first-order solver supports d = 1, 2")
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (self.n,) * self.d:
            raise ConfigError(f"f has shape {self.f.shape}, expected {(self.n,) * self.d}")

    @property
    def dx(self):
        return 1.0 / self.n

    def centers(self):
        ax = (np.arange(self.n) + 0.5) * self.dx
        return np.meshgrid(*([ax] * self.d), indexing="ij")

    def mass(self):
        return float(self.f.sum() * self.dx**self.d)

    def copy(self):
        return replace(self, f=self.f.copy(), stats=dict(self.stats))


# --------------------------------------------------------------------------
# initial data


def landau_initial(nx=128, nv=128, v_max=6.0, eps=0.5, mode=1, velocity_std=1.0):
    """``(1 + eps cos(2 pi mode x)) * N(0, s^2)(v)``, normalised on the grid."""
    g = PhaseGrid1D(nx, nv, v_max, np.zeros((nx, nv)))
    rho = 1.0 + eps * np.cos(2 * math.pi * mode * g.x)
    gauss = np.exp(-0.5 * (g.v / velocity_std) ** 2)
    g.f = np.outer(rho, gauss)
    g.f /= g.mass()
    return g


def uniform_gaussian(nx=128, nv=128, v_max=6.0, velocity_std=1.0):
    return landau_initial(nx, nv, v_max, 0.0, 1, velocity_std)


def cosine_spatial(n=64, d=1, eps=0.5, mode=1):
    """``1 + eps cos(2 pi mode x_1)`` on ``[0,1)^d``."""
    g = SpatialGrid(n, d, np.zeros((n,) * d))
    g.f = 1.0 + eps * np.cos(2 * math.pi * mode * g.centers()[0])
    return g


def phase_grid_from_density(dens: GridDensity) -> PhaseGrid1D:
    if dens.k != 1 or dens.d != 1 or dens.spatial:
        raise ConfigError("need a k=1, d=1 phase-space density")
    return PhaseGrid1D(dens.x_bins, dens.v_bins, dens.v_max, dens.values.copy(), dens.time)


# --------------------------------------------------------------------------
# field


def _freqs(n):
    return np.fft.fftfreq(n, 1.0 / n)


def _force_symbol(kernel: KernelSpec, n: int):
    """Fourier coefficients ``K_hat(m)`` on the ``n^d`` FFT grid, shape ``(d,) + (n,)*d``."""
    d = kernel.dim
    axes = np.meshgrid(*([_freqs(n)] * d), indexing="ij")
    m = np.stack(axes)
    m2 = np.sum(m * m, axis=0)
    fam = kernel.family
    if fam == "zero":
        return np.zeros((d,) + (n,) * d, dtype=complex)
    if fam == "coulomb":
        omega = 2.0 if d == 1 else ewald_params(kernel).omega
        with np.errstate(divide="ignore", invalid="ignore"):
            phi_hat = np.where(m2 > 0, kernel.strength * omega / (4 * math.pi**2 * m2), 0.0)
    elif fam == "smooth_fourier":
        phi_hat = np.zeros((n,) * d)
        modes, amps = _mode_arrays(kernel)
        for vec, a in zip(modes, amps):
            if np.any(np.abs(vec) >= n // 2):
                raise GridMismatch(f"mode {tuple(vec)} is not resolved on an n={n} grid")
            for sgn in (1, -1):
                phi_hat[tuple(int(c) for c in sgn * vec % n)] += kernel.strength * a / 2
    else:
        table = tabulate_force(kernel, n)
        sym = np.fft.fftn(table, axes=tuple(range(1, d + 1))) / n**d
        nyq = np.any(m == -(n // 2), axis=0)
        return np.where(nyq, 0.0, sym)
    sym = -2j * math.pi * m * phi_hat
    nyq = np.any(m == -(n // 2), axis=0)
    return np.where(nyq, 0.0, sym)


_SYMBOLS: dict = {}


def _cached_symbol(kernel, n):
    key = (kernel, n)
    if key not in _SYMBOLS:
        _SYMBOLS[key] = _force_symbol(kernel, n)
    return _SYMBOLS[key]


def field_from_density(rho, kernel: KernelSpec):
    """``K * rho`` at the cell centres, computed spectrally; shape ``(d,) + rho.shape``.

    The Coulomb family uses the Poisson symbol directly.
    """
    rho = np.asarray(rho, dtype=float)
    d = kernel.dim
    if rho.ndim != d or len(set(rho.shape)) != 1:
        raise GridMismatch("rho must be a cube grid matching the kernel dimension")
    n = rho.shape[0]
    rho_hat = np.fft.fftn(rho)
    sym = _cached_symbol(kernel, n)
    return np.real(np.fft.ifftn(sym * rho_hat, axes=tuple(range(1, d + 1))))


# --------------------------------------------------------------------------
# cubic spline shifts


def _bspline_weights(t):
    """Cubic B-spline weights for the nodes ``-1, 0, 1, 2`` at offset ``t``."""
    t2, t3 = t * t, t * t * t
    return ((1 - t) ** 3 / 6, (3 * t3 - 6 * t2 + 4) / 6,
            (-3 * t3 + 3 * t2 + 3 * t + 1) / 6, t3 / 6)


def spline_shift(F, shift):
    """Evaluate the periodic cubic spline of each row of ``F`` at ``i - shift``.

    ``F`` has shape ``(rows, n)``; ``shift`` (in grid units) has shape
    ``(rows,)``.  Each row's sum is preserved exactly.
    """
    rows, n = F.shape
    k = np.arange(n // 2 + 1)
    pre = (4 + 2 * np.cos(2 * math.pi * k / n)) / 6
    C = np.fft.irfft(np.fft.rfft(F, axis=1) / pre, n=n, axis=1)
    shift = np.asarray(shift, dtype=float)
    m = np.floor(shift)
    t = 1.0 - (shift - m)                          # point = (i - m - 1) + t
    w = _bspline_weights(t)
    base = np.arange(n)[None, :] - m[:, None].astype(np.int64) - 1
    r = np.arange(rows)[:, None]
    out = np.zeros_like(F)
    for off, wk in zip((-1, 0, 1, 2), w):
        out += wk[:, None] * C[r, (base + off) % n]
    return out


# --------------------------------------------------------------------------
# kinetic solver


def _diffusion_bands(nv, coef):
    """Banded ``(I - coef D)`` with the zero-flux three-point Laplacian ``D``."""
    main = np.full(nv, 1 + 2 * coef)
    main[0] = main[-1] = 1 + coef
    ab = np.zeros((3, nv))
    ab[0, 1:] = -coef
    ab[1] = main
    ab[2, :-1] = -coef
    return ab


def _apply_laplacian(F):
    """Zero-flux second difference along the last axis (unscaled)."""
    flux = np.diff(F, axis=-1)
    out = np.zeros_like(F)
    out[..., :-1] += flux
    out[..., 1:] -= flux
    return out


def _x_shift(g, tau):
    # column j moves by v_j * tau in x
    return spline_shift(g.f.T, g.v * tau / g.dx).T


def solve_vpfp_1d(f0: PhaseGrid1D, kernel: KernelSpec, sigma: float, t_end: float,
                  dt: float, check_cfl: bool = True) -> PhaseGrid1D:
    """Strang-split semi-Lagrangian solver for the kinetic equation in ``d = 1``.

    Each step: x-shift by ``v dt/2``, field solve and v-shift by ``E dt``,
    Crank-Nicolson velocity diffusion, x-shift by ``v dt/2``.  Velocity
    shifts are periodic over the truncated domain so every stage conserves
    mass; the returned grid's ``stats`` records the relative mass drift
    and the most negative value seen (no renormalisation is applied).
    """
    if kernel.dim != 1:
        raise ConfigError("the kinetic solver is one-dimensional")
    if sigma < 0 or dt <= 0 or t_end < 0:
        raise ConfigError("need sigma >= 0, dt > 0, t_end >= 0")
    g = f0.copy()
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else dt
    if check_cfl and g.v_max * h > g.dx * (1 + 1e-12):
        raise CFLViolation(f"max|v| dt = {g.v_max * h:.3g} exceeds dx = {g.dx:.3g}")
    m0 = g.mass()
    coef = 0.5 * sigma**2 * h / g.dv**2 / 2
    ab = _diffusion_bands(g.nv, coef) if sigma > 0 else None
    worst = 0.0
    for _ in range(n_steps):
        g.f = _x_shift(g, h / 2)
        E = field_from_density(g.density(), kernel)[0]
        if check_cfl and np.max(np.abs(E)) * h > g.dv * (1 + 1e-12):
            raise CFLViolation(f"max|E| dt = {np.max(np.abs(E)) * h:.3g} exceeds dv = {g.dv:.3g}")
        if kernel.family != "zero":
            g.f = spline_shift(g.f, E * h / g.dv)
        if ab is not None:
            rhs = g.f + coef * _apply_laplacian(g.f)
            g.f = solve_banded((1, 1), ab, rhs.T).T
        g.f = _x_shift(g, h / 2)
        fmax = float(g.f.max())
        worst = min(worst, float(g.f.min()) / fmax if fmax > 0 else 0.0)
    if worst < -OVERSHOOT_TOL:
        warnings.warn(f"min f reached {worst:.3g} * max f", NegativeOvershoot, stacklevel=2)
    g.time = f0.time + t_end
    g.stats = {"steps": n_steps, "dt": h, "mass_drift": abs(g.mass() - m0) / m0,
               "min_ratio": worst}
    return g


# --------------------------------------------------------------------------
# first-order solver


def _face_flux(f, E):
    """Centred fluxes ``E f`` at the faces ``i + 1/2`` along each axis; returns divergence."""
    div = np.zeros_like(f)
    for a in range(f.ndim):
        fe = 0.5 * (f + np.roll(f, -1, axis=a))
        ee = 0.5 * (E[a] + np.roll(E[a], -1, axis=a))
        flux = ee * fe
        div += flux - np.roll(flux, 1, axis=a)
    return div


def _advect_rhs(f, kernel, dx):
    E = field_from_density(f, kernel)
    return -_face_flux(f, E) / dx, E


def _heat(f, sigma, tau):
    n, d = f.shape[0], f.ndim
    m = np.meshgrid(*([_freqs(n)] * d), indexing="ij")
    m2 = sum(c * c for c in m)
    decay = np.exp(-0.5 * sigma**2 * (2 * math.pi) ** 2 * m2 * tau)
    return np.real(np.fft.ifftn(np.fft.fftn(f) * decay))


def solve_first_order(f0: SpatialGrid, kernel: KernelSpec, sigma: float, t_end: float,
                      dt: float, check_cfl: bool = True) -> SpatialGrid:
    """Finite-volume / spectral Strang solver for the first-order equation.

    Advection uses centred face fluxes with SSP-RK3 (the field is
    recomputed at every stage); diffusion is applied exactly in Fourier
    space.  Steps are ``A(dt/2) D(dt) A(dt/2)``.
    """
    if kernel.dim != f0.d:
        raise ConfigError("kernel dimension does not match the grid")
    if sigma < 0 or dt <= 0 or t_end < 0:
        raise ConfigError("need sigma >= 0, dt > 0, t_end >= 0")
    g = f0.copy()
    n_steps = int(math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else dt
    m0 = g.mass()
    advect = kernel.family != "zero"

    def A(f, tau):
        k1, E = _advect_rhs(f, kernel, g.dx)
        if check_cfl and np.max(np.abs(E)) * tau > g.dx * (1 + 1e-12):
            raise CFLViolation(f"max|E| dt = {np.max(np.abs(E)) * tau:.3g} exceeds dx = {g.dx:.3g}")
        f1 = f + tau * k1
        f2 = 0.75 * f + 0.25 * (f1 + tau * _advect_rhs(f1, kernel, g.dx)[0])
        return f / 3 + 2 / 3 * (f2 + tau * _advect_rhs(f2, kernel, g.dx)[0])

    f = g.f
    for _ in range(n_steps):
        if advect:
            f = A(f, h / 2)
        if sigma > 0:
            f = _heat(f, sigma, h)
        if advect:
            f = A(f, h / 2)
    g.f = f
    g.time = f0.time + t_end
    g.stats = {"steps": n_steps, "dt": h, "mass_drift": abs(g.mass() - m0) / m0}
    return g


# --------------------------------------------------------------------------
# embedding in the histogram grids


def _block_average(values, axis, factor):
    shape = list(values.shape)
    shape[axis:axis + 1] = [shape[axis] // factor, factor]
    return values.reshape(shape).mean(axis=axis + 1)


def project(f, grid: GridSpec | None = None) -> GridDensity:
    """Cell-average a solution onto a coarser histogram grid (k = 1).

    The histogram cells must be unions of solver cells; mass outside
    ``|v| < grid.v_max`` is reported as ``truncation_mass``.
    """
    if isinstance(f, SpatialGrid):
        bins = f.n if grid is None else grid.x_bins
        if f.n % bins:
            raise GridMismatch("histogram x cells must be unions of solver cells")
        vals = f.f
        for a in range(f.d):
            vals = _block_average(vals, a, f.n // bins)
        return GridDensity(1, f.d, bins, 0, 0.0, vals, spatial=True, time=f.time,
                           provenance="first_order")
    if grid is None:
        return GridDensity(1, 1, f.nx, f.nv, f.v_max, f.f.copy(), time=f.time, provenance="vpfp_1d")
    if grid.spatial:
        rho = SpatialGrid(f.nx, 1, f.density(), f.time)
        return project(rho, grid)
    dv_h = 2 * grid.v_max / grid.v_bins
    ratio, offset = dv_h / f.dv, (f.v_max - grid.v_max) / f.dv
    if f.nx % grid.x_bins or abs(ratio - round(ratio)) > 1e-9 or abs(offset - round(offset)) > 1e-9 \
            or offset < -1e-9:
        raise GridMismatch("histogram cells must be unions of solver cells")
    lo = int(round(offset))
    inner = f.f[:, lo:lo + grid.v_bins * int(round(ratio))]
    vals = _block_average(_block_average(inner, 0, f.nx // grid.x_bins), 1, int(round(ratio)))
    total = f.mass()
    kept = float(inner.sum() * f.dx * f.dv)
    return GridDensity(1, 1, grid.x_bins, grid.v_bins, grid.v_max, vals,
                       truncation_mass=max(0.0, (total - kept) / total) if total else 0.0,
                       time=f.time, provenance="vpfp_1d")


def tensorize(f, k: int, grid: GridSpec | None = None) -> GridDensity:
    """``f^{(x)k}`` as a :class:`GridDensity`, optionally on a coarser grid."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    base = f if isinstance(f, GridDensity) else project(f, grid)
    if k == 1:
        return base
    out = np.multiply.outer(base.values, base.values)
    return replace(base, k=k, values=out,
                   truncation_mass=1.0 - (1.0 - base.truncation_mass) ** k)
