"""Torus geometry and repulsive interaction kernels.

All displacements live on the unit torus and are reduced to the half-open
cell ``[-1/2, 1/2)^d``.  Every kernel derives from an even potential
``phi >= 0`` with ``K = -grad(phi)``, and both vanish at the origin by
convention so that particle sums may include the diagonal.

Families
--------
coulomb
    ``K = alpha x/|x|^d + K0``.  ``d=1`` uses the closed form
    ``phi = alpha (x^2 - |x| + 1/4)``; ``d=2,3`` use an Ewald split into a
    screened real-space image sum and a Gaussian-damped Fourier series.
mild_power
    ``|K| ~ alpha |x|^-a`` near the origin, compactly supported in the
    ball of radius 1/2 (so only the minimum image contributes).
smooth_fourier
    ``phi = alpha sum_m a_m cos(2 pi m.x)`` plus a constant shift.
zero
    No interaction.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError, DivergentIntegral, NonIntegrableSingularity

FAMILIES = ("coulomb", "mild_power", "smooth_fourier", "zero")

# Ewald truncation target; both the real-space and Fourier tails sit below it.
EWALD_TOL = 1e-16
SHIFT_MARGIN = 1e-12
MILD_SUPPORT = 0.5


def _sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 points for d=1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def wrap(x):
    """Reduce coordinates into ``[0, 1)``; idempotent."""
    y = np.asarray(x, dtype=float)
    y = y - np.floor(y)
    # x - floor(x) rounds to 1.0 for tiny negative x
    return np.where(y >= 1.0, 0.0, y)


def minimum_image(a, b=None):
    """Displacement ``a - b`` reduced to ``[-1/2, 1/2)`` componentwise.

    With a single argument, reduces an already-formed displacement.
    A tie at exactly +1/2 resolves to -1/2.
    """
    r = np.asarray(a, dtype=float)
    if b is not None:
        r = r - np.asarray(b, dtype=float)
    return r - np.floor(r + 0.5)


def _normalize_modes(modes, dim):
    out = []
    for m, amp in modes:
        vec = tuple(int(c) for c in np.atleast_1d(m))
        if len(vec) != dim:
            raise ConfigError(f"mode {vec} does not match dim={dim}")
        if not any(vec):
            raise ConfigError("the zero mode carries no force and is not allowed")
        out.append((vec, float(amp)))
    return tuple(out)


@dataclass(frozen=True)
class KernelSpec:
    """Immutable description of an interaction kernel on the torus.

    ``n_images`` and ``n_fourier`` control the Ewald periodization of the
    Coulomb family (real-space shell count and Fourier cutoff); ``None``
    picks defaults accurate to about 1e-15.  ``potential_shift=None``
    computes the smallest shift making ``phi >= 0``.
    """

    family: str = "zero"
    strength: float = 1.0
    dim: int = 1
    exponent: float = 0.5
    modes: tuple = ()
    n_images: int | None = None
    n_fourier: int | None = None
    potential_shift: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.strength < 0:
            raise ConfigError("attractive kernels (strength < 0) are not supported")
        object.__setattr__(self, "modes", _normalize_modes(self.modes, self.dim))
        if self.family == "smooth_fourier" and not self.modes:
            raise ConfigError("smooth_fourier needs at least one mode")
        if self.family == "mild_power" and self.exponent <= 0:
            raise ConfigError("mild_power exponent must be positive")
        if self.potential_shift is not None and self.potential_shift < 0:
            raise ConfigError("potential_shift must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["modes"] = [[list(m), a] for m, a in self.modes]
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["modes"] = tuple((tuple(m), a) for m, a in data.get("modes", ()))
        return cls(**data)

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def shift(self):
        return potential_shift(self)


def smooth_kernel(dim=1, strength=1.0):
    """Default smooth repulsive kernel: modes 1 and 2 along every axis."""
    modes = []
    for axis in range(dim):
        for m, amp in ((1, 1.0), (2, 0.25)):
            vec = [0] * dim
            vec[axis] = m
            modes.append((tuple(vec), amp))
    return KernelSpec("smooth_fourier", strength=strength, dim=dim, modes=tuple(modes))


# --------------------------------------------------------------------------
# Ewald machinery for the Coulomb family, d >= 2


@dataclass(frozen=True)
class EwaldParams:
    kappa: float
    n_images: int
    n_fourier: int
    modes: np.ndarray = field(repr=False)  # (M, d) half-space integer modes
    coef: np.ndarray = field(repr=False)   # (M,) potential coefficients incl. the +-m pair
    background: float = 0.0                # constant making the potential mean zero
    omega: float = 0.0                     # Green's function normalisation, -lap G = omega delta


def ewald_params(spec: KernelSpec) -> EwaldParams:
    if spec.family != "coulomb" or spec.dim < 2:
        raise ValueError("Ewald parameters only exist for coulomb with d >= 2")
    return _ewald_params(spec.dim, spec.strength, spec.n_images, spec.n_fourier)


@functools.lru_cache(maxsize=32)
def _ewald_params(d, alpha, n_images, n_fourier):
    if d > 3:
        raise NonIntegrableSingularity(f"coulomb periodization not implemented for d={d}")
    if n_images is None:
        n_images = 0 if d == 2 else 1
    tail = math.sqrt(-math.log(EWALD_TOL))
    kappa = tail / (n_images + 0.5)
    if n_fourier is None:
        n_fourier = int(math.ceil(kappa * tail / math.pi))
    omega = 2.0 * math.pi if d == 2 else 4.0 * math.pi
    axes = [np.arange(-n_fourier, n_fourier + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    # keep one representative of each +-m pair: first nonzero component positive
    first = np.array([row[np.nonzero(row)[0][0]] if row.any() else 0 for row in grid])
    half = grid[first > 0]
    m2 = np.sum(half.astype(float) ** 2, axis=1)
    coef = 2.0 * alpha * omega / (4.0 * math.pi**2 * m2) * np.exp(-math.pi**2 * m2 / kappa**2)
    keep = coef > coef.max() * 1e-20
    return EwaldParams(
        kappa=kappa,
        n_images=n_images,
        n_fourier=n_fourier,
        modes=half[keep],
        coef=coef[keep],
        background=alpha * omega / (4.0 * kappa**2),
        omega=omega,
    )


def _image_offsets(d, n_images):
    axes = [np.arange(-n_images, n_images + 1)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d).astype(float)


def _phases(r, modes):
    """exp(2 pi i m.r) for points ``r`` of shape (..., d) and modes (M, d) -> (..., M)."""
    d = r.shape[-1]
    mmax = int(np.abs(modes).max())
    span = np.arange(-mmax, mmax + 1)
    out = None
    for a in range(d):
        table = np.exp(2j * math.pi * r[..., a, None] * span)
        col = table[..., modes[:, a] + mmax]
        out = col if out is None else out * col
    return out


def _ewald_real(r, params, alpha, want_force):
    d = r.shape[-1]
    pot = np.zeros(r.shape[0])
    force = np.zeros_like(r)
    k = params.kappa
    for n in _image_offsets(d, params.n_images):
        s = r + n
        rho2 = np.sum(s * s, axis=1)
        ok = rho2 > 0
        rho2s = np.where(ok, rho2, 1.0)
        if d == 2:
            if not want_force:
                pot += np.where(ok, 0.5 * special.exp1(k * k * rho2s), 0.0)
            else:
                fac = np.exp(-k * k * rho2s) / rho2s
                force += np.where(ok, fac, 0.0)[:, None] * s
        else:
            rho = np.sqrt(rho2s)
            if not want_force:
                pot += np.where(ok, special.erfc(k * rho) / rho, 0.0)
            else:
                fac = (special.erfc(k * rho) + 2 * k * rho / math.sqrt(math.pi) * np.exp(-k * k * rho2s)) / (rho2s * rho)
                force += np.where(ok, fac, 0.0)[:, None] * s
    return alpha * (force if want_force else pot)


def _ewald_recip(r, params, want_force, chunk=2048):
    out = np.zeros(r.shape) if want_force else np.zeros(r.shape[0])
    for lo in range(0, r.shape[0], chunk):
        ph = _phases(r[lo:lo + chunk], params.modes)
        if want_force:
            w = ph.imag * params.coef[None, :]
            out[lo:lo + chunk] = 2 * math.pi * (w @ params.modes.astype(float))
        else:
            out[lo:lo + chunk] = ph.real @ params.coef
    return out


def _coulomb_raw_potential(spec, r):
    """Zero-mean periodized Coulomb potential (no shift, no origin convention)."""
    a = spec.strength
    if spec.dim == 1:
        x = np.abs(r[:, 0])
        return a * (x * x - x + 1.0 / 6.0)
    p = ewald_params(spec)
    return _ewald_real(r, p, a, False) + _ewald_recip(r, p, False) - p.background


def _coulomb_force(spec, r):
    a = spec.strength
    if spec.dim == 1:
        x = r[:, 0]
        return (a * (np.sign(x) - 2.0 * x))[:, None]
    p = ewald_params(spec)
    return _ewald_real(r, p, a, True) + _ewald_recip(r, p, True)


# --------------------------------------------------------------------------
# mild power family: phi = alpha h(r) b(r), b a C-infinity cutoff


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1; returns (value, derivative)."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pa = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        pb = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        dpa = np.where(t > 0, pa / np.where(t > 0, t, 1.0) ** 2, 0.0)
        dpb = np.where(t < 1, -pb / np.where(t < 1, 1.0 - t, 1.0) ** 2, 0.0)
    den = pa + pb
    val = pa / den
    der = (dpa * den - pa * (dpa + dpb)) / den**2
    return val, der


def _mild_parts(spec, rho):
    a = spec.exponent
    R = MILD_SUPPORT
    R0 = R / 4
    rs = np.where(rho > 0, rho, 1.0)
    if abs(a - 1.0) < 1e-14:
        h = np.log(R / rs)
    else:
        h = (R ** (1 - a) - rs ** (1 - a)) / (1 - a)
    h = np.where(rho < R, h, 0.0)
    b, db = _smooth_step((R - rho) / (R - R0))
    db = -db / (R - R0)
    return rs, h, b, db


def _mild_potential(spec, r):
    rho = np.sqrt(np.sum(r * r, axis=1))
    _, h, b, _ = _mild_parts(spec, rho)
    return spec.strength * h * b


def _mild_force(spec, r):
    rho = np.sqrt(np.sum(r * r, axis=1))
    rs, h, b, db = _mild_parts(spec, rho)
    radial = spec.strength * (rs ** (-spec.exponent) * b - h * db)
    radial = np.where((rho > 0) & (rho < MILD_SUPPORT), radial, 0.0)
    return (radial / rs)[:, None] * r


# --------------------------------------------------------------------------
# smooth Fourier family


def _mode_arrays(spec):
    m = np.array([v for v, _ in spec.modes], dtype=float)
    a = np.array([amp for _, amp in spec.modes], dtype=float)
    return m, a


def _fourier_potential(spec, r):
    m, a = _mode_arrays(spec)
    return spec.strength * (np.cos(2 * math.pi * r @ m.T) @ a)


def _fourier_force(spec, r):
    m, a = _mode_arrays(spec)
    s = np.sin(2 * math.pi * r @ m.T) * a[None, :]
    return spec.strength * 2 * math.pi * (s @ m)


# --------------------------------------------------------------------------
# public evaluation


def _check_family(spec):
    if spec.family == "mild_power" and spec.exponent >= spec.dim:
        raise NonIntegrableSingularity(
            f"|x|^-{spec.exponent} is not locally integrable in d={spec.dim}")
    if spec.family == "coulomb" and spec.dim > 3:
        raise NonIntegrableSingularity(f"coulomb periodization not implemented for d={spec.dim}")


def raw_potential(spec: KernelSpec, r):
    """Periodized potential before the positivity shift, no origin convention."""
    _check_family(spec)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if spec.family == "zero":
        return np.zeros(r.shape[0])
    if spec.family == "smooth_fourier":
        return _fourier_potential(spec, r)
    if spec.family == "mild_power":
        return _mild_potential(spec, r)
    return _coulomb_raw_potential(spec, r)


@functools.lru_cache(maxsize=64)
def potential_shift(spec: KernelSpec) -> float:
    """Constant added to the raw potential so that ``phi >= 0`` everywhere."""
    if spec.potential_shift is not None:
        return float(spec.potential_shift)
    if spec.family in ("zero", "mild_power"):
        return 0.0
    if spec.family == "smooth_fourier":
        # |cos| <= 1 gives an exact lower bound, no grid search needed
        return spec.strength * sum(abs(a) for _, a in spec.modes)
    if spec.dim == 1:
        return spec.strength / 12.0
    n = 24
    ax = (np.arange(n) + 0.5) / n - 0.5
    pts = np.stack(np.meshgrid(*([ax] * spec.dim), indexing="ij"), -1).reshape(-1, spec.dim)
    pts = np.vstack([pts, np.full((1, spec.dim), -0.5)])
    vals = raw_potential(spec, pts)
    return float(-vals.min() + SHIFT_MARGIN)


def eval_potential(spec: KernelSpec, r):
    """Shifted periodized potential ``phi(r)``; 0 at ``r = 0`` by convention.

    ``r`` has shape ``(d,)`` or ``(n, d)``.
    """
    arr = np.asarray(r, dtype=float)
    single = arr.ndim == 1
    r2 = minimum_image(np.atleast_2d(arr))
    out = raw_potential(spec, r2) + potential_shift(spec)
    out = np.where(np.all(r2 == 0, axis=1), 0.0, out)
    return float(out[0]) if single else out


def eval_force(spec: KernelSpec, r):
    """Force ``K(r) = -grad phi(r)``; the zero vector at ``r = 0``."""
    _check_family(spec)
    arr = np.asarray(r, dtype=float)
    single = arr.ndim == 1
    r2 = minimum_image(np.atleast_2d(arr))
    if spec.family == "zero":
        out = np.zeros_like(r2)
    elif spec.family == "smooth_fourier":
        out = _fourier_force(spec, r2)
    elif spec.family == "mild_power":
        out = _mild_force(spec, r2)
    else:
        out = _coulomb_force(spec, r2)
    out = np.where(np.all(r2 == 0, axis=1)[:, None], 0.0, out)
    return out[0] if single else out


def singular_force(spec: KernelSpec, r):
    """Leading singular part ``alpha x/|x|^d`` (Coulomb) or ``alpha x|x|^-(a+1)`` (mild)."""
    r2 = np.atleast_2d(np.asarray(r, dtype=float))
    rho = np.sqrt(np.sum(r2 * r2, axis=1))
    rs = np.where(rho > 0, rho, 1.0)
    if spec.family == "coulomb":
        power = spec.dim
    elif spec.family == "mild_power":
        power = spec.exponent + 1
    else:
        return np.zeros_like(r2)
    out = spec.strength * r2 / rs[:, None] ** power
    return np.where(rho[:, None] > 0, out, 0.0)


def node_grid(n, d):
    """Grid nodes ``i/n`` reduced to the minimum-image cell, shape ``(n,)*d + (d,)``."""
    ax = minimum_image(np.arange(n) / n)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1)


def tabulate_force(spec: KernelSpec, n: int, cache_dir=None):
    """``K`` sampled at the grid nodes ``i/n``; shape ``(d,) + (n,)*d``.

    With ``cache_dir`` the table is stored as an MFT1 tensor keyed by the
    spec hash and resolution, and reused on later calls.
    """
    from .tensorio import read_tensor, write_tensor

    path = None
    if cache_dir is not None:
        path = os.path.join(cache_dir, f"kernel_{spec.content_hash()[:16]}_{n}.mft")
        if os.path.exists(path):
            arr, header = read_tensor(path)
            if header.get("spec_hash") == spec.content_hash() and header.get("resolution") == n:
                return arr
    pts = node_grid(n, spec.dim).reshape(-1, spec.dim)
    table = eval_force(spec, pts).T.reshape((spec.dim,) + (n,) * spec.dim)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        write_tensor(path, table, {"spec_hash": spec.content_hash(), "resolution": n})
    return table


# --------------------------------------------------------------------------
# kernel norms


@dataclass(frozen=True)
class KernelNormReport:
    p_exponent: float
    lp_norm: float
    theta_exp: float
    exp_phi_integral: float
    quadrature_error: float
    lp_error: float = 0.0
    exp_phi_error: float = 0.0


def _cutoff(rho, r_in=0.125, r_out=0.375):
    val, _ = _smooth_step((r_out - rho) / (r_out - r_in))
    return val


def _radial_integral(power, d, r_in=0.125, r_out=0.375, n=64):
    """Integral of |x|^power * cutoff(|x|) over R^d; needs power > -d."""
    area = _sphere_area(d)
    g = power + d
    inner = r_in**g / g
    xs, ws = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (r_out - r_in) * xs + 0.5 * (r_out + r_in)
    outer = 0.5 * (r_out - r_in) * np.sum(ws * s ** (power + d - 1) * _cutoff(s, r_in, r_out))
    return area * (inner + outer)


def _singular_terms(spec, p, theta):
    """Leading singular behaviour ``c |x|^power`` of |K|^p and of e^{theta phi}.

    Returns two (coefficient, power) pairs; coefficient 0 means bounded.
    """
    d = spec.dim
    a = spec.strength
    lp_term = (0.0, 0.0)
    exp_term = (0.0, 0.0)
    if spec.family == "coulomb" and d >= 2:
        lp_term = (a**p, -(d - 1) * p)
        if d == 2 and theta > 0:
            tiny = 1e-7
            c0 = raw_potential(spec, np.array([[tiny, 0.0]]))[0] + a * math.log(tiny) + potential_shift(spec)
            exp_term = (math.exp(theta * c0), -theta * a)
        elif d > 2:
            exp_term = (math.inf, 0.0)
    elif spec.family == "mild_power":
        lp_term = (a**p, -spec.exponent * p)
        if spec.exponent > 1 and theta > 0:
            exp_term = (math.inf, 0.0)
        elif abs(spec.exponent - 1) < 1e-14:
            exp_term = (MILD_SUPPORT ** (theta * a), -theta * a)
    return lp_term, exp_term


def _norm_integrals(spec, p, theta, n, lp_term, exp_term):
    d = spec.dim
    ax = (np.arange(n) + 0.5) / n - 0.5
    pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
    rho = np.sqrt(np.sum(pts * pts, axis=1))
    cell = 1.0 / n**d
    kmag = np.linalg.norm(eval_force(spec, pts), axis=1)
    phi = raw_potential(spec, pts) + potential_shift(spec)
    chi = _cutoff(rho)
    c, pw = lp_term
    lp_rem = kmag**p - (c * rho**pw * chi if c else 0.0)
    c2, pw2 = exp_term
    ex_rem = np.exp(theta * phi) - (c2 * rho**pw2 * chi if c2 else 0.0)
    lp_int = np.sum(lp_rem) * cell + (c * _radial_integral(pw, d) if c else 0.0)
    ex_int = np.sum(ex_rem) * cell + (c2 * _radial_integral(pw2, d) if c2 else 0.0)
    return lp_int, ex_int


def estimate_kernel_norms(spec: KernelSpec, p: float, theta: float, resolution: int = 64) -> KernelNormReport:
    """Estimate ``||K||_{L^p}`` and ``int e^{theta phi}`` over the unit torus.

    The leading power-law singularity at the origin is subtracted with a
    smooth radial cutoff and integrated in polar form; the bounded
    remainder uses midpoint quadrature at ``resolution`` and
    ``2*resolution`` cells per axis.  The finer value is reported and the
    difference of the two is the error estimate.
    """
    if p <= 1 or theta <= 0:
        raise ConfigError("need p > 1 and theta > 0")
    if resolution < 16:
        raise ConfigError("resolution must be >= 16")
    _check_family(spec)
    n = resolution + resolution % 2
    lp_term, exp_term = _singular_terms(spec, p, theta)
    d = spec.dim
    if lp_term[0] and lp_term[1] <= -d:
        raise DivergentIntegral(f"|K|^{p} ~ |x|^{lp_term[1]:g} is not integrable in d={d}")
    if exp_term[0] == math.inf or (exp_term[0] and exp_term[1] <= -d):
        raise DivergentIntegral(f"exp(theta*phi) is not integrable for theta={theta} in d={d}")
    lp_c, ex_c = _norm_integrals(spec, p, theta, n, lp_term, exp_term)
    lp_f, ex_f = _norm_integrals(spec, p, theta, 2 * n, lp_term, exp_term)
    lp_norm = max(lp_f, 0.0) ** (1.0 / p)
    lp_err = abs(lp_norm - max(lp_c, 0.0) ** (1.0 / p))
    ex_err = abs(ex_f - ex_c)
    return KernelNormReport(
        p_exponent=p,
        lp_norm=lp_norm,
        theta_exp=theta,
        exp_phi_integral=ex_f,
        quadrature_error=max(lp_err, ex_err),
        lp_error=lp_err,
        exp_phi_error=ex_err,
    )


def kernel_lp_norm(spec: KernelSpec, p: float, resolution: int = 64) -> float:
    """Only ``||K||_{L^p}``, skipping the exponential-moment integral."""
    if p <= 1:
        raise ConfigError("need p > 1")
    _check_family(spec)
    n = resolution + resolution % 2
    lp_term, _ = _singular_terms(spec, p, 0.0)
    if lp_term[0] and lp_term[1] <= -spec.dim:
        raise DivergentIntegral(f"|K|^{p} ~ |x|^{lp_term[1]:g} is not integrable in d={spec.dim}")
    val, _ = _norm_integrals(spec, p, 0.0, 2 * n, lp_term, (0.0, 0.0))
    return max(val, 0.0) ** (1.0 / p)


# --------------------------------------------------------------------------
# decomposition used by the particle and grid solvers


@dataclass(frozen=True)
class KernelSplit:
    """``raw_phi(r) = pair_potential(r) + sum_m coef_m cos(2 pi m.r) - constant``.

    The pair part acts on minimum-image displacements and vanishes at
    ``r = 0``; the cosine series is handled through structure factors.
    """

    spec: KernelSpec
    has_pairs: bool
    modes: np.ndarray
    coef: np.ndarray
    constant: float

    def pair_potential(self, r):
        s = self.spec
        shape = r.shape[:-1]
        flat = r.reshape(-1, s.dim)
        if s.family == "coulomb" and s.dim == 1:
            x = np.abs(flat[:, 0])
            out = s.strength * (x * x - x + 1.0 / 6.0)
        elif s.family == "coulomb":
            out = _ewald_real(flat, ewald_params(s), s.strength, False)
        elif s.family == "mild_power":
            out = _mild_potential(s, flat)
        else:
            out = np.zeros(flat.shape[0])
        out = np.where(np.all(flat == 0, axis=1), 0.0, out)
        return out.reshape(shape)

    def pair_force(self, r):
        s = self.spec
        flat = r.reshape(-1, s.dim)
        if s.family == "coulomb" and s.dim == 1:
            x = flat[:, :1]
            out = s.strength * (np.sign(x) - 2.0 * x)
        elif s.family == "coulomb":
            out = _ewald_real(flat, ewald_params(s), s.strength, True)
        elif s.family == "mild_power":
            out = _mild_force(s, flat)
        else:
            out = np.zeros_like(flat)
        return out.reshape(r.shape)


@functools.lru_cache(maxsize=32)
def kernel_split(spec: KernelSpec) -> KernelSplit:
    _check_family(spec)
    empty_m = np.zeros((0, spec.dim), dtype=int)
    empty_c = np.zeros(0)
    if spec.family == "zero":
        return KernelSplit(spec, False, empty_m, empty_c, 0.0)
    if spec.family == "smooth_fourier":
        m, a = _mode_arrays(spec)
        return KernelSplit(spec, False, m.astype(int), spec.strength * a, 0.0)
    if spec.family == "mild_power" or spec.dim == 1:
        return KernelSplit(spec, True, empty_m, empty_c, 0.0)
    p = ewald_params(spec)
    return KernelSplit(spec, True, p.modes, p.coef, p.background)
