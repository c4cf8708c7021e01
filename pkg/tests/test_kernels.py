import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from meanfield.errors import ConfigError, DivergentIntegral, NonIntegrableSingularity
from meanfield.kernels import (KernelSpec, estimate_kernel_norms, eval_force, eval_potential,
                               kernel_lp_norm, minimum_image, smooth_kernel, tabulate_force, wrap)

FAMILIES = [
    KernelSpec("coulomb", 1.0, 1),
    KernelSpec("coulomb", 1.0, 2),
    KernelSpec("coulomb", 0.7, 3),
    KernelSpec("mild_power", 1.0, 1, exponent=0.5),
    KernelSpec("mild_power", 1.0, 2, exponent=1.5),
    KernelSpec("mild_power", 2.0, 3, exponent=2.0),
    smooth_kernel(1),
    smooth_kernel(2),
    smooth_kernel(3, strength=0.5),
]

coords = st.floats(-50, 50, allow_nan=False)


@given(coords)
def test_wrap_is_idempotent_and_in_cell(x):
    y = wrap(x)
    assert 0.0 <= y < 1.0
    assert wrap(y) == y


@given(coords, coords)
def test_minimum_image_range(a, b):
    r = minimum_image(a, b)
    assert -0.5 <= r < 0.5
    assert abs((a - b - r) - round(a - b - r)) < 1e-9


def test_minimum_image_tie_goes_negative():
    assert minimum_image(0.5) == -0.5
    assert minimum_image(-0.5) == -0.5


def test_spec_roundtrip_and_hash():
    for spec in FAMILIES:
        again = KernelSpec.from_dict(spec.to_dict())
        assert again == spec
        assert again.content_hash() == spec.content_hash()


def test_spec_validation():
    with pytest.raises(ConfigError):
        KernelSpec("gravity")
    with pytest.raises(ConfigError):
        KernelSpec("coulomb", -1.0, 2)
    with pytest.raises(ConfigError):
        KernelSpec("smooth_fourier", 1.0, 1)
    with pytest.raises(NonIntegrableSingularity):
        eval_force(KernelSpec("mild_power", 1.0, 2, exponent=2.0), [0.1, 0.1])


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: f"{s.family}-d{s.dim}")
def test_origin_convention_and_symmetry(spec):
    d = spec.dim
    zero = np.zeros(d)
    assert eval_potential(spec, zero) == 0.0
    assert np.all(eval_force(spec, zero) == 0.0)
    rng = np.random.default_rng(1)
    r = rng.uniform(-0.5, 0.5, (200, d))
    phi = eval_potential(spec, r)
    assert np.all(phi >= 0)
    np.testing.assert_allclose(phi, eval_potential(spec, -r), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(eval_force(spec, r), -eval_force(spec, -r), rtol=1e-12, atol=1e-12)


def test_coulomb_1d_closed_form():
    spec = KernelSpec("coulomb", 1.5, 1)
    x = np.linspace(-0.49, 0.49, 41)
    x = x[x != 0]
    np.testing.assert_allclose(eval_force(spec, x[:, None])[:, 0], 1.5 * (np.sign(x) - 2 * x), atol=1e-14)
    np.testing.assert_allclose(eval_potential(spec, x[:, None]), 1.5 * (x**2 - abs(x) + 0.25), atol=1e-14)


def _row_sum_force(x, y, alpha, rows=40):
    """Periodic 2D Coulomb force from summing cot over rows of images."""
    z = x + 1j * y
    m = np.arange(-rows, rows + 1)
    return alpha * np.sum(math.pi / np.tan(math.pi * (z - 1j * m)))


def test_coulomb_2d_against_row_sum_oracle():
    # sum over horizontal rows of images: cot(pi z) per row.  The symmetric
    # row sum picks up a linear term in y, removed by comparing y and y+1.
    alpha = 1.3
    spec = KernelSpec("coulomb", alpha, 2)
    rng = np.random.default_rng(5)
    for x, y in rng.uniform(-0.45, 0.45, (25, 2)):
        w = _row_sum_force(x, y, alpha)
        slope = (_row_sum_force(x, y + 1, alpha) - w).imag
        w = w - 1j * slope * y
        K = eval_force(spec, [x, y])
        assert abs(K[0] - w.real) < 1e-10
        assert abs(K[1] + w.imag) < 1e-10


def test_coulomb_singular_part():
    for d in (2, 3):
        spec = KernelSpec("coulomb", 1.0, d)
        r = np.zeros(d)
        r[0] = 1e-4
        K = eval_force(spec, r)
        assert K[0] == pytest.approx(1e-4 / 1e-4**d, rel=1e-5)


def test_smooth_force_matches_series():
    spec = smooth_kernel(1, strength=2.0)
    x = np.linspace(-0.45, 0.45, 19)[:, None]
    expected = 2.0 * 2 * math.pi * (np.sin(2 * math.pi * x) + 0.25 * 2 * np.sin(4 * math.pi * x))
    np.testing.assert_allclose(eval_force(spec, x), expected, atol=1e-12)


def test_mild_power_support_and_singularity():
    spec = KernelSpec("mild_power", 1.0, 2, exponent=0.5)
    far = np.array([[0.5, 0.01], [0.4, 0.4], [-0.36, 0.36]])
    assert np.all(eval_force(spec, far) == 0)
    assert np.all(eval_potential(spec, far) == 0)
    r = 1e-6
    K = eval_force(spec, [r, 0.0])
    assert K[0] == pytest.approx(r**-0.5, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, len(FAMILIES) - 1), st.integers(0, 2**31))
def test_force_is_minus_gradient(idx, seed):
    spec = FAMILIES[idx]
    d = spec.dim
    rng = np.random.default_rng(seed)
    r = rng.uniform(-0.45, 0.45, d)
    if np.linalg.norm(r) < 0.1:
        r = r + 0.15
    h = 1e-5
    grad = np.array([(eval_potential(spec, r + h * e) - eval_potential(spec, r - h * e)) / (2 * h)
                     for e in np.eye(d)])
    assert np.linalg.norm(eval_force(spec, r) + grad) <= 1e-6


def test_tabulate_force_cache(tmp_path):
    spec = smooth_kernel(2)
    a = tabulate_force(spec, 16, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = tabulate_force(spec, 16, tmp_path)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (2, 16, 16)


def test_smooth_norms_against_quadrature():
    spec = smooth_kernel(1)
    rep = estimate_kernel_norms(spec, 2.0, 0.3)
    # ||K||_2^2 = (2 pi)^2 * sum a^2 m^2 / 2
    assert rep.lp_norm == pytest.approx(math.sqrt(4 * math.pi**2 * (0.5 + 0.125)), rel=1e-10)
    oracle, _ = integrate.quad(lambda x: math.exp(0.3 * eval_potential(spec, [x])), -0.5, 0.5, limit=200)
    assert rep.exp_phi_integral == pytest.approx(oracle, rel=1e-8)


def test_coulomb_2d_exp_integral_against_dblquad():
    spec = KernelSpec("coulomb", 1.0, 2)
    rep = estimate_kernel_norms(spec, 1.5, 0.5, resolution=32)

    def integrand(r, t):
        return r * math.exp(0.5 * eval_potential(spec, [r * math.cos(t), r * math.sin(t)]))
    inner, _ = integrate.dblquad(integrand, 0, 2 * math.pi, 0, 0.25, epsabs=1e-10)
    pts = (np.arange(400) + 0.5) / 400 - 0.5
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    flat = np.stack([X.ravel(), Y.ravel()], 1)
    outer_mask = np.hypot(flat[:, 0], flat[:, 1]) >= 0.25
    # midpoint on the outer region is smooth apart from the circle edge
    outer = np.sum(np.exp(0.5 * eval_potential(spec, flat[outer_mask]))) / 400**2
    assert rep.exp_phi_integral == pytest.approx(inner + outer, rel=2e-3)
    assert rep.quadrature_error < 1e-2


def test_lp_norm_convergence_and_divergence():
    spec = KernelSpec("coulomb", 1.0, 2)
    a = kernel_lp_norm(spec, 1.5, 32)
    b = kernel_lp_norm(spec, 1.5, 64)
    assert abs(a - b) < 1e-3 * b
    with pytest.raises(DivergentIntegral):
        kernel_lp_norm(spec, 2.0)
    with pytest.raises(DivergentIntegral):
        estimate_kernel_norms(KernelSpec("coulomb", 1.0, 3), 1.2, 0.1)
    assert kernel_lp_norm(KernelSpec("zero", dim=2), 2.0) == 0.0


def test_zero_kernel_norms():
    rep = estimate_kernel_norms(KernelSpec("zero", dim=2), 2.0, 0.4, resolution=16)
    assert rep.lp_norm == 0.0
    assert rep.exp_phi_integral == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("d,a,p,finite", [(2, 0.5, 3.0, True), (2, 1.0, 2.0, False), (3, 1.4, 2.0, True),
                                          (1, 0.4, 3.0, False), (3, 2.5, 1.1, True)])
def test_mild_power_counting(d, a, p, finite):
    spec = KernelSpec("mild_power", 1.0, d, exponent=a)
    if finite:
        assert np.isfinite(kernel_lp_norm(spec, p, 16))
    else:
        with pytest.raises(DivergentIntegral):
            kernel_lp_norm(spec, p, 16)


def test_coulomb_power_counting():
    assert np.isfinite(kernel_lp_norm(KernelSpec("coulomb", 1.0, 3), 1.4, 16))
    with pytest.raises(DivergentIntegral):
        kernel_lp_norm(KernelSpec("coulomb", 1.0, 3), 1.5, 16)


@pytest.mark.parametrize("spec", FAMILIES, ids=lambda s: f"{s.family}-d{s.dim}")
def test_periodicity(spec):
    rng = np.random.default_rng(8)
    r = rng.uniform(-0.5, 0.5, (50, spec.dim))
    shift = np.zeros(spec.dim)
    shift[0] = 1.0
    np.testing.assert_allclose(eval_force(spec, r + shift), eval_force(spec, r), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(eval_potential(spec, r - 2 * shift), eval_potential(spec, r), rtol=1e-12, atol=1e-12)
