import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfiqa import tensor as T
from sfiqa.spectral import (Spectrum, fft, fourier_conv, irfft2, rfft2, spectral_pointwise_mul, spectral_stack,
                            spectral_unstack)
from sfiqa.tensor import ShapeError, Tensor

from conftest import analytic_grads, gradcheck, numeric_grad


def dft_oracle(x):
    """O(n^2) DFT along the last axis."""
    n = x.shape[-1]
    k = np.arange(n)
    return x @ np.exp(-2j * np.pi * np.outer(k, k) / n)


def circular_conv_oracle(x, h):
    c, hh, ww = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for i in range(hh):
            for j in range(ww):
                acc = 0.0
                for u in range(hh):
                    for v in range(ww):
                        acc += x[ch, u, v] * h[ch, (i - u) % hh, (j - v) % ww]
                out[ch, i, j] = acc
    return out


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 64])
def test_fft_matches_direct_dft(n, rng):
    x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    assert np.max(np.abs(fft(x) - dft_oracle(x))) < 1e-10


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ShapeError, match="powers? of two"):
        rfft2(np.zeros((1, 6, 8)))


def test_delta_transform():
    x = np.zeros((1, 8, 8))
    x[0, 0, 0] = 1.0
    s = rfft2(x)
    assert np.array_equal(s.real, np.ones((1, 8, 5)))
    assert np.array_equal(s.imag, np.zeros((1, 8, 5)))


def test_constant_image_dc_only():
    s = rfft2(np.full((1, 8, 16), 0.3))
    z = s.complex()
    assert abs(z[0, 0, 0] - 0.3 * 128) < 1e-10
    z[0, 0, 0] = 0
    assert np.max(np.abs(z)) < 1e-10


def test_real_signal_symmetries(rng):
    s = rfft2(rng.normal(size=(2, 8, 8)))
    assert np.max(np.abs(s.imag[:, 0, 0])) < 1e-12
    assert np.max(np.abs(s.imag[:, 0, -1])) < 1e-12


@pytest.mark.parametrize("h,w", [(1, 1), (2, 4), (8, 8), (16, 32), (64, 64), (64, 2)])
def test_roundtrip(h, w, rng):
    x = rng.normal(size=(2, h, w))
    assert np.max(np.abs(irfft2(rfft2(x), h, w) - x)) < 1e-10


def test_parseval(rng):
    x = rng.normal(size=(1, 8, 8))
    full = np.fft.fft2(x)  # independent full spectrum for the mirrored bins
    s = rfft2(x)
    assert np.allclose(s.complex(), full[..., :5], atol=1e-10)
    lhs = np.sum(x ** 2)
    rhs = np.sum(np.abs(full) ** 2) / 64
    assert abs(lhs - rhs) / lhs < 1e-9
    # and from the half spectrum alone, weighting the mirrored columns twice
    half = np.abs(s.complex()) ** 2
    weights = np.array([1, 2, 2, 2, 1])
    assert abs(np.sum(half * weights) / 64 - lhs) / lhs < 1e-9


def test_pointwise_identity(rng):
    s = rfft2(rng.normal(size=(1, 8, 8)))
    ones = Spectrum(np.ones(s.shape), np.zeros(s.shape))
    out = spectral_pointwise_mul(s, ones)
    assert np.array_equal(out.real, s.real) and np.array_equal(out.imag, s.imag)


def test_pointwise_shape_mismatch():
    a = Spectrum(np.zeros((1, 8, 5)), np.zeros((1, 8, 5)))
    b = Spectrum(np.zeros((1, 4, 3)), np.zeros((1, 4, 3)))
    with pytest.raises(ShapeError):
        spectral_pointwise_mul(a, b)


def test_shift_theorem(rng):
    x = rng.normal(size=(1, 8, 8))
    delta = np.zeros((1, 8, 8))
    delta[0, 2, 3] = 1.0
    out = irfft2(spectral_pointwise_mul(rfft2(x), rfft2(delta)), 8, 8)
    assert np.max(np.abs(out - np.roll(x, (2, 3), axis=(1, 2)))) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_convolution_theorem(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(1, 8, 8))
    h = r.normal(size=(1, 8, 8))
    out = irfft2(spectral_pointwise_mul(rfft2(x), rfft2(h)), 8, 8)
    assert np.max(np.abs(out - circular_conv_oracle(x, h))) < 1e-9


def test_stack_matches_functional_api(rng):
    x = rng.normal(size=(2, 3, 8, 16))
    s = spectral_stack(Tensor(x)).data
    ref = rfft2(x)
    assert np.max(np.abs(s[:, :3] - ref.real)) < 1e-12
    assert np.max(np.abs(s[:, 3:] - ref.imag)) < 1e-12
    back = spectral_unstack(Tensor(s), 8, 16).data
    assert np.max(np.abs(back - x)) < 1e-12


def test_unstack_on_arbitrary_half_spectrum_matches_numpy(rng):
    z = rng.normal(size=(2, 8, 5)) + 1j * rng.normal(size=(2, 8, 5))
    out = spectral_unstack(Tensor(np.concatenate([z.real, z.imag])), 8, 8).data
    assert np.max(np.abs(out - np.fft.irfft2(z, s=(8, 8)))) < 1e-12


def test_fourier_conv_identity_linear_mode(rng):
    c = 3
    x = rng.normal(size=(c, 8, 8))
    w = np.eye(2 * c).reshape(2 * c, 2 * c, 1, 1)
    out = fourier_conv(Tensor(x), Tensor(w), Tensor(np.zeros(2 * c)), linear=True)
    assert np.max(np.abs(out.data - x)) < 1e-9


def test_fourier_conv_zero_weights(rng):
    x = rng.normal(size=(2, 8, 8))
    out = fourier_conv(Tensor(x), Tensor(np.zeros((4, 4, 1, 1))), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros_like(x))


def test_fourier_conv_weight_channel_check():
    with pytest.raises(ShapeError, match="fourier_conv"):
        fourier_conv(Tensor(np.zeros((2, 8, 8))), Tensor(np.zeros((2, 2, 1, 1))), Tensor(np.zeros(2)))


@pytest.mark.parametrize("linear", [True, False])
def test_fourier_conv_gradient(linear):
    for seed in range(10):
        r = np.random.default_rng(seed)
        arrays_ = [r.normal(size=(2, 4, 8)), r.normal(size=(4, 4, 1, 1)), r.normal(size=4)]
        fn = lambda x, w, b: T.mean(T.mul(fourier_conv(x, w, b, linear=linear), Tensor(r2)))
        r2 = np.random.default_rng(seed + 100).normal(size=(2, 4, 8))
        assert gradcheck(fn, arrays_) < 1e-5, seed


def test_fourier_conv_mean_gradient():
    # the spatial mean only sees the DC bin; when its ReLU is off every gradient is exactly
    # zero and finite differences return rounding noise, so check that case absolutely
    fn = lambda x, w, b: T.mean(fourier_conv(x, w, b))
    for seed in range(10):
        r = np.random.default_rng(seed)
        arrays_ = [r.normal(size=(2, 8, 8)), r.normal(size=(4, 4, 1, 1)), r.normal(size=4)]
        grads = analytic_grads(fn, arrays_)
        if max(np.abs(g).max() for g in grads) < 1e-15:
            assert all(np.abs(numeric_grad(fn, arrays_, i)).max() < 1e-9 for i in range(3)), seed
        else:
            assert gradcheck(fn, arrays_) < 1e-5, seed


def test_stack_unstack_gradients(rng):
    x = rng.normal(size=(2, 4, 8))
    m = rng.normal(size=(4, 4, 5))
    assert gradcheck(lambda a: T.sum_(T.mul(spectral_stack(a), Tensor(m))), [x]) < 1e-5
    s = rng.normal(size=(4, 4, 5))
    m2 = rng.normal(size=(2, 4, 8))
    assert gradcheck(lambda a: T.sum_(T.mul(spectral_unstack(a, 4, 8), Tensor(m2))), [s]) < 1e-5


def test_global_receptive_field(rng):
    c = 4
    x = rng.normal(size=(c, 16, 16))
    w = Tensor(rng.normal(size=(2 * c, 2 * c, 1, 1)))
    b = Tensor(rng.normal(size=2 * c))
    base = fourier_conv(Tensor(x), w, b).data
    x2 = x.copy()
    x2[1, 5, 9] += 0.5
    delta = np.abs(fourier_conv(Tensor(x2), w, b).data - base)
    assert np.mean(delta > 1e-12) >= 0.99


@given(st.sampled_from([1, 2, 4, 8, 16, 32, 64]), st.sampled_from([1, 2, 4, 8, 16, 32, 64]),
       st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_roundtrip_property(h, w, seed):
    x = np.random.default_rng(seed).uniform(-5, 5, size=(1, h, w))
    assert np.max(np.abs(irfft2(rfft2(x), h, w) - x)) < 1e-10
