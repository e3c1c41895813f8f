import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wssm.numerics import EmptyInputError, InvalidSpectrumError, Spectrum, fft_real, grad_check, ifft_real
from wssm.numerics import tensor as tp
from wssm.numerics.gradcheck import check_tensor_fn

from .oracles import circular_convolution, naive_dft, naive_scan

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_fft_delta_is_flat():
    spec = fft_real([1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(spec.coefficients, np.ones(3), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 6, 11])
def test_fft_constant_is_dc_only(n):
    c = 2.5
    coeffs = fft_real(np.full(n, c)).coefficients
    assert coeffs[0] == pytest.approx(n * c)
    np.testing.assert_allclose(coeffs[1:], 0.0, atol=1e-12)


def test_fft_matches_naive_dft():
    x = np.random.default_rng(3).normal(size=7)
    np.testing.assert_allclose(fft_real(x).coefficients, naive_dft(x)[:4], atol=1e-12)


def test_fft_empty_input():
    with pytest.raises(EmptyInputError):
        fft_real([])


def test_ifft_round_trip():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    np.testing.assert_allclose(ifft_real(fft_real(x)), x, atol=1e-12)


def test_ifft_zero_spectrum():
    np.testing.assert_array_equal(ifft_real(Spectrum(6, np.zeros(4, complex))), np.zeros(6))


def test_ifft_rejects_bad_hermitian_endpoints():
    with pytest.raises(InvalidSpectrumError):
        ifft_real(Spectrum(4, np.array([1.0 + 1.0j, 0.0, 0.0])))
    with pytest.raises(InvalidSpectrumError):
        ifft_real(Spectrum(4, np.array([1.0, 0.0, 2.0j])))
    with pytest.raises(InvalidSpectrumError):
        Spectrum(4, np.zeros(2, complex))


def test_spectral_product_is_circular_convolution():
    rng = np.random.default_rng(11)
    for n in (5, 8, 11):
        a, b = rng.normal(size=n), rng.normal(size=n)
        prod = Spectrum(n, fft_real(a).coefficients * fft_real(b).coefficients)
        np.testing.assert_allclose(ifft_real(prod), circular_convolution(a, b), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=finite))
def test_parseval(x):
    c = fft_real(x).coefficients
    n = len(x)
    energy = abs(c[0]) ** 2
    top = n // 2 if n % 2 == 0 else n // 2 + 1
    energy += 2 * np.sum(np.abs(c[1:top]) ** 2)
    if n % 2 == 0 and n > 1:
        energy += abs(c[n // 2]) ** 2
    assert energy / n == pytest.approx(np.sum(x * x), rel=1e-10, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))),
    finite, finite)
def test_fft_linearity(xy, a, b):
    x, y = xy
    lhs = fft_real(a * x + b * y).coefficients
    rhs = a * fft_real(x).coefficients + b * fft_real(y).coefficients
    scale = max(1.0, np.max(np.abs(lhs)))
    np.testing.assert_allclose(lhs / scale, rhs / scale, atol=1e-12)


def test_grad_check_quadratic():
    err = grad_check(lambda x: (float(np.sum(x * x)), 2 * x), np.array([1.0, 2.0]), 1e-5)
    assert err < 1e-9


def test_grad_check_sine():
    x0 = np.random.default_rng(0).normal(size=6)
    assert grad_check(lambda x: (float(np.sum(np.sin(x))), np.cos(x)), x0, 1e-5) < 1e-8


def test_grad_check_detects_wrong_gradient():
    assert grad_check(lambda x: (float(np.sum(x * x)), x), np.array([1.0, 2.0])) > 0.1


def test_grad_check_propagates_non_finite():
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        grad_check(lambda x: (float(np.log(x[0])), 1 / x), np.array([5e-5]), 1e-4)


# tape primitives ------------------------------------------------------------


def _weighted(out, w):
    return tp.sum(tp.mul(out, w))


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients(seed):
    rng = np.random.default_rng(seed)
    arrays_ = {"a": rng.normal(size=(2, 3, 4)), "w": rng.normal(size=(4, 5)), "b": rng.normal(size=5)}
    probe = rng.normal(size=(2, 3, 5))

    def fn(p):
        h = tp.linear(p["a"], p["w"], p["b"])
        h = tp.add(tp.silu(h), tp.mul(tp.sigmoid(h), tp.softplus(h)))
        h = tp.add(h, tp.exp(tp.mul(h, 0.1)))
        h = tp.concat([tp.flip(h, -2), tp.getitem(h, (Ellipsis, slice(0, 1), slice(None)))], axis=-2)
        h = tp.swapaxes(tp.layer_norm(h), -1, -2)
        return tp.add(_weighted(tp.getitem(tp.swapaxes(h, -1, -2), (Ellipsis, slice(0, 3), slice(None))), probe),
                      tp.mean(tp.mul(h, h)))

    errors = check_tensor_fn(fn, arrays_, step=1e-5)
    assert max(errors.values()) < 1e-7, errors


def test_gather_windows_gradient():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 9, 3))
    probe = rng.normal(size=(2, 4, 3, 3))
    errors = check_tensor_fn(lambda p: _weighted(tp.gather_windows(p["x"], 3, 2, 4), probe), {"x": x})
    assert errors["x"] < 1e-8


def test_causal_conv_gradient_and_causality():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 6, 3))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    probe = rng.normal(size=(2, 6, 3))
    errors = check_tensor_fn(lambda p: _weighted(tp.causal_conv1d(p["x"], p["w"], p["b"]), probe),
                             {"x": x, "w": w, "b": b})
    assert max(errors.values()) < 1e-8
    y0 = tp.causal_conv1d(x, w, b).data
    x2 = x.copy()
    x2[:, 4] += 1.0
    y1 = tp.causal_conv1d(x2, w, b).data
    np.testing.assert_array_equal(y0[:, :4], y1[:, :4])


def test_circular_conv_matches_oracle_and_gradient():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(2, 7, 3))
    k = rng.normal(size=(2, 3, 3))
    out = tp.circular_conv(z, k).data
    for i in range(2):
        for ch in range(3):
            kpad = np.zeros(7)
            kpad[:3] = k[i, :, ch]
            np.testing.assert_allclose(out[i, :, ch], circular_convolution(z[i, :, ch], kpad), atol=1e-10)
    probe = rng.normal(size=(2, 7, 3))
    errors = check_tensor_fn(lambda p: _weighted(tp.circular_conv(p["z"], p["k"]), probe), {"z": z, "k": k})
    assert max(errors.values()) < 1e-8


def test_selective_scan_matches_naive_loop():
    rng = np.random.default_rng(5)
    u = rng.normal(size=(2, 6, 3))
    delta = rng.uniform(0.05, 1.0, size=(2, 6, 3))
    A = -rng.uniform(0.5, 2.0, size=(3, 4))
    B = rng.normal(size=(2, 6, 4))
    C = rng.normal(size=(2, 6, 4))
    D = rng.normal(size=3)
    y = tp.selective_scan(u, delta, A, B, C, D).data
    for i in range(2):
        np.testing.assert_allclose(y[i], naive_scan(u[i], delta[i], A, B[i], C[i], D), atol=1e-12)


def test_selective_scan_gradient():
    rng = np.random.default_rng(6)
    arrays_ = {
        "u": rng.normal(size=(2, 5, 3)),
        "delta": rng.uniform(0.1, 1.0, size=(2, 5, 3)),
        "A": -rng.uniform(0.5, 2.0, size=(3, 2)),
        "B": rng.normal(size=(2, 5, 2)),
        "C": rng.normal(size=(2, 5, 2)),
        "D": rng.normal(size=3),
    }
    probe = rng.normal(size=(2, 5, 3))
    errors = check_tensor_fn(
        lambda p: _weighted(tp.selective_scan(p["u"], p["delta"], p["A"], p["B"], p["C"], p["D"]), probe),
        arrays_, step=1e-5)
    assert max(errors.values()) < 1e-8, errors


def test_selective_scan_rejects_non_positive_delta():
    with pytest.raises(ValueError):
        tp.selective_scan(np.ones((2, 1)), np.array([[1.0], [0.0]]), -np.ones((1, 1)),
                          np.ones((2, 1)), np.ones((2, 1)), np.zeros(1))


def test_backward_accumulates_shared_leaf():
    x = tp.leaf(np.array([3.0]))
    y = tp.add(tp.mul(x, x), x)
    y.backward(np.ones(1))
    assert x.grad[0] == pytest.approx(7.0)


def test_unbroadcast_sums_expanded_axes():
    g = np.ones((4, 2, 3))
    np.testing.assert_array_equal(tp.unbroadcast(g, (2, 1)), np.full((2, 1), 12.0))
    assert math.isclose(float(tp.unbroadcast(g, ()).sum()), 24.0)
