import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynfm.rkhs import (KernelConfig, RkhsScalarFunction, SamplerConfig, draw_support,
                        eval_scalar, kernel_eval, kernel_matrix, rkhs_norm, sample_vector_field,
                        scale_to_norm)
from dynfm.rng import derive_seed, substream


def gram_double_sum(f):
    """Independent oracle: explicit double loop over kernel_eval."""
    total = 0.0
    for i in range(len(f.coeffs)):
        for j in range(len(f.coeffs)):
            total += f.coeffs[i] * f.coeffs[j] * kernel_eval(f.kernel, f.points[i], f.points[j])
    return math.sqrt(max(total, 0.0))


# kernel


def test_kernel_zero_distance():
    assert kernel_eval(KernelConfig(), [0.3, -1.0], [0.3, -1.0]) == 1.0


def test_kernel_closed_form():
    # sigma2=2, l=1, squared distance 2 -> 2 exp(-1)
    assert kernel_eval(KernelConfig(2.0, 1.0), [0.0, 0.0], [1.0, 1.0]) == pytest.approx(0.7357588823428847, rel=1e-12)


def test_kernel_long_lengthscale_approaches_sigma2_from_below():
    vals = [kernel_eval(KernelConfig(1.0, l), [0.0], [1.0]) for l in (1.0, 10.0, 1e3, 1e5)]
    assert all(v < 1.0 for v in vals)
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] == pytest.approx(1.0, abs=1e-9)


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelConfig(), [0.0, 1.0], [0.0])


def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(sigma2=0.0)
    with pytest.raises(ValueError):
        KernelConfig(lengthscale=-1.0)


pts = arrays(np.float64, 3, elements=st.floats(-5, 5))


@given(pts, pts)
def test_kernel_symmetric_and_bounded(a, b):
    k = KernelConfig(1.7, 0.8)
    kab, kba = kernel_eval(k, a, b), kernel_eval(k, b, a)
    assert kab == kba
    assert 0.0 <= kab <= k.sigma2
    if np.array_equal(a, b):
        assert kab == k.sigma2


def test_kernel_matrix_matches_pointwise():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    k = KernelConfig(1.3, 0.7)
    K = kernel_matrix(k, a, b)
    for i in range(4):
        for j in range(3):
            assert K[i, j] == pytest.approx(kernel_eval(k, a[i], b[j]), rel=1e-14)


# scalar functions


def test_eval_single_point():
    f = RkhsScalarFunction([[0.5, 0.5]], [2.0])
    assert eval_scalar(f, [0.5, 0.5]) == 2.0


def test_eval_zero_function():
    f = RkhsScalarFunction([[0.0], [1.0]], [0.0, 0.0])
    assert all(eval_scalar(f, [x]) == 0.0 for x in (-3.0, 0.0, 0.4))


def test_eval_two_terms_oracle():
    k = KernelConfig(1.5, 0.6)
    p = np.array([[0.0, 1.0], [2.0, -1.0]])
    a = np.array([0.7, -1.3])
    f = RkhsScalarFunction(p, a, k)
    x = np.array([0.4, 0.2])
    expected = a[0] * kernel_eval(k, x, p[0]) + a[1] * kernel_eval(k, x, p[1])
    assert eval_scalar(f, x) == pytest.approx(expected, rel=1e-14)
    assert f(x) == eval_scalar(f, x)


def test_eval_dimension_mismatch():
    f = RkhsScalarFunction([[0.0, 0.0]], [1.0])
    with pytest.raises(ValueError):
        eval_scalar(f, [0.0])


def test_support_outside_box_rejected():
    with pytest.raises(ValueError):
        RkhsScalarFunction([[6.0]], [1.0], box=(-5.0, 5.0))


def test_norm_examples():
    assert rkhs_norm(RkhsScalarFunction([[0.0]], [2.0])) == 2.0
    # coincident points: Gram is all ones, norm^2 = (1 + 1)^2 = 4
    assert rkhs_norm(RkhsScalarFunction([[1.0], [1.0]], [1.0, 1.0])) == pytest.approx(2.0, rel=1e-15)
    assert rkhs_norm(RkhsScalarFunction([[0.0], [1.0]], [0.0, 0.0])) == 0.0


def test_norm_clamps_rounding_noise():
    # coincident points with opposite coefficients give an exactly-zero form
    f = RkhsScalarFunction([[0.0], [0.0]], [1.0, -1.0])
    assert rkhs_norm(f) == 0.0


def test_norm_rejects_indefinite(monkeypatch):
    import dynfm.rkhs as R

    f = RkhsScalarFunction([[0.0], [3.0]], [1.0, 1.0])
    monkeypatch.setattr(R, "kernel_matrix", lambda k, a, b: -np.eye(2))
    with pytest.raises(ArithmeticError, match="negative"):
        rkhs_norm(f)
    monkeypatch.setattr(R, "kernel_matrix", lambda k, a, b: -1e-12 * np.eye(2))
    assert rkhs_norm(f) == 0.0


def test_scale_examples():
    f = RkhsScalarFunction([[0.0]], [2.0])
    g = scale_to_norm(f, 5.0)
    assert g.coeffs[0] == pytest.approx(5.0)
    assert rkhs_norm(g) == pytest.approx(5.0, rel=1e-12)
    np.testing.assert_array_equal(g.points, f.points)
    same = scale_to_norm(f, 2.0)
    np.testing.assert_array_equal(same.coeffs, f.coeffs)


def test_scale_zero_function_errors():
    with pytest.raises(ValueError, match="zero function"):
        scale_to_norm(RkhsScalarFunction([[0.0]], [0.0]), 1.0)
    with pytest.raises(ValueError):
        scale_to_norm(RkhsScalarFunction([[0.0]], [1.0]), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 50.0), st.floats(-20, 20).filter(lambda c: abs(c) > 1e-3))
def test_norm_properties(seed, target, c):
    cfg = SamplerConfig(n_support=20)
    rng = substream(seed, "prop")
    p, a = draw_support(cfg, rng)
    f = RkhsScalarFunction(p, a)
    # homogeneity
    assert rkhs_norm(RkhsScalarFunction(p, c * a)) == pytest.approx(abs(c) * rkhs_norm(f), rel=1e-12)
    g = scale_to_norm(f, target)
    assert abs(gram_double_sum(g) - target) / target < 1e-9
    # idempotent
    h = scale_to_norm(g, target)
    np.testing.assert_allclose(h.coeffs, g.coeffs, rtol=1e-12)


# sampling


def test_vector_field_shapes_and_box():
    cfg = SamplerConfig(d_x=2, n_support=50, seed=4)
    field = sample_vector_field(cfg, index=7)
    assert len(field.components) == 2
    for comp in field.components:
        assert comp.points.shape == (50, 2)
        assert np.all((comp.points >= -5) & (comp.points <= 5))


def test_vector_field_deterministic():
    cfg = SamplerConfig(seed=9)
    a, b = sample_vector_field(cfg, 3), sample_vector_field(cfg, 3)
    for ca, cb in zip(a.components, b.components):
        np.testing.assert_array_equal(ca.points, cb.points)
        np.testing.assert_array_equal(ca.coeffs, cb.coeffs)
    other = sample_vector_field(cfg, 4)
    assert not np.array_equal(a.components[0].coeffs, other.components[0].coeffs)


def test_vector_field_fixed_norm():
    cfg = SamplerConfig(norm_min=3.0, norm_max=3.0, seed=1)
    for i in range(5):
        for comp in sample_vector_field(cfg, i).components:
            assert abs(gram_double_sum(comp) - 3.0) / 3.0 < 1e-9


def test_vector_field_component_norms_independent():
    cfg = SamplerConfig(seed=2)
    norms = [rkhs_norm(c) for c in sample_vector_field(cfg, 0).components]
    assert all(5.0 <= n <= 20.0 for n in norms)
    assert norms[0] != pytest.approx(norms[1])


def test_vector_field_call_matches_components():
    field = sample_vector_field(SamplerConfig(d_x=3, seed=5), 0)
    x = np.array([0.3, -1.2, 2.0])
    expected = [eval_scalar(c, x) for c in field.components]
    np.testing.assert_allclose(field(x), expected, rtol=1e-12, atol=1e-14)


def test_coefficient_variance():
    cfg = SamplerConfig(n_support=100, sigma_alpha2=2.5)
    coeffs = np.concatenate([draw_support(cfg, substream(0, "var", i))[1] for i in range(200)])
    assert len(coeffs) >= 10_000
    assert abs(coeffs.var() / 2.5 - 1.0) < 0.05


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(x_min=1.0, x_max=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(norm_min=5.0, norm_max=1.0)
    assert SamplerConfig(kernel={"sigma2": 2.0}).kernel == KernelConfig(2.0, 1.0)


def test_substreams():
    a = substream(5, "x", 1).random(4)
    np.testing.assert_array_equal(a, substream(5, "x", 1).random(4))
    assert not np.array_equal(a, substream(5, "x", 2).random(4))
    assert derive_seed(5, "r", 0) == derive_seed(5, "r", 0)
    with pytest.raises(ValueError):
        substream(-1)
    with pytest.raises(TypeError):
        substream(0, 1.5)
