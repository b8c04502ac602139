"""Radix-2 Fourier transforms and the learnable Fourier convolution layer.

Conventions: the forward transform is unnormalized, the inverse carries the
``1/(H*W)`` factor. Real inputs use the half spectrum with ``W//2 + 1``
columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor, _make, conv2d, relu


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(m) / (2 * m))


def fft(x: np.ndarray, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Unnormalized iterative decimation-in-time FFT along ``axis``.

    With ``inverse=True`` the twiddle sign flips; no ``1/n`` is applied.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ShapeError(f"fft: extent {n} is not a power of two")
    lead = x.shape[:-1]
    y = x[..., _bitrev(n)]
    m = 1
    while m < n:
        blocks = y.reshape(lead + (n // (2 * m), 2, m))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _twiddles(m, inverse)
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return np.moveaxis(y, -1, axis)


def fft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    return fft(fft(x, -1, inverse), -2, inverse)


def _check_spatial(h: int, w: int, op: str) -> None:
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"{op}: spatial extents {h}×{w} must be powers of two")


@dataclass
class Spectrum:
    """Half spectrum of a real C×H×W signal (``real``/``imag`` are C×H×(W//2+1))."""

    real: np.ndarray
    imag: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def _rfft2_array(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    _check_spatial(h, w, "rfft2")
    return fft2(x)[..., : w // 2 + 1]


def _half_weights(w: int) -> np.ndarray:
    c = np.full(w // 2 + 1, 2.0)
    c[0] = 1.0
    if w % 2 == 0:
        c[-1] = 1.0
    return c


def _irfft2_array(z: np.ndarray, h: int, w: int) -> np.ndarray:
    # Re(sum over half spectrum of c_k Z_k e^{+i theta}) / (H W): equals the
    # Hermitian-completed inverse when z comes from a real signal, and is a
    # well-defined real-linear map for any other z.
    _check_spatial(h, w, "irfft2")
    if z.shape[-2:] != (h, w // 2 + 1):
        raise ShapeError(f"irfft2: half spectrum {z.shape} does not match output {h}×{w}")
    full = np.zeros(z.shape[:-1] + (w,), dtype=np.complex128)
    full[..., : w // 2 + 1] = z * _half_weights(w)
    return fft2(full, inverse=True).real / (h * w)


def rfft2(x) -> Spectrum:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    z = _rfft2_array(data)
    return Spectrum(z.real.copy(), z.imag.copy())


def irfft2(s: Spectrum, h: int, w: int) -> np.ndarray:
    return _irfft2_array(s.complex(), h, w)


def spectral_pointwise_mul(s: Spectrum, k: Spectrum) -> Spectrum:
    if s.shape != k.shape:
        raise ShapeError(f"spectral_pointwise_mul: shape mismatch {s.shape} vs {k.shape}")
    return Spectrum(s.real * k.real - s.imag * k.imag, s.real * k.imag + s.imag * k.real)


# --- differentiable wrappers -------------------------------------------------
#
# Training runs the same linear maps as dense real matrices. The matrices are
# obtained by pushing basis images through the radix-2 routines above, so they
# are those transforms exactly; they are just cheaper to apply many times at
# these small extents.

@lru_cache(maxsize=None)
def _forward_matrices(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    basis = np.eye(h * w).reshape(h * w, h, w)
    z = _rfft2_array(basis).reshape(h * w, -1)
    re, im = np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)
    re.setflags(write=False)
    im.setflags(write=False)
    return re, im


@lru_cache(maxsize=None)
def _inverse_matrices(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    wh = w // 2 + 1
    basis = np.eye(h * wh).reshape(h * wh, h, wh)
    re = _irfft2_array(basis.astype(np.complex128), h, w).reshape(h * wh, h * w)
    im = _irfft2_array(1j * basis, h, w).reshape(h * wh, h * w)
    re.setflags(write=False)
    im.setflags(write=False)
    return re, im


def spectral_stack(x: Tensor) -> Tensor:
    """(N×)C×H×W real tensor -> (N×)2C×H×(W/2+1): real parts then imaginary parts."""
    if x.data.ndim not in (3, 4):
        raise ShapeError(f"spectral_stack: expected C×H×W or N×C×H×W, got {x.shape}")
    h, w = x.shape[-2:]
    _check_spatial(h, w, "spectral_stack")
    wh = w // 2 + 1
    lead = x.shape[:-2]
    mr, mi = _forward_matrices(h, w)
    flat = x.data.reshape(-1, h * w)
    out = np.concatenate([(flat @ mr).reshape(lead + (h, wh)), (flat @ mi).reshape(lead + (h, wh))], axis=-3)
    c = x.shape[-3]

    def bw(g):
        gr = g[..., :c, :, :].reshape(-1, h * wh)
        gi = g[..., c:, :, :].reshape(-1, h * wh)
        return ((gr @ mr.T + gi @ mi.T).reshape(x.shape),)

    return _make(out, (x,), "spectral_stack", bw)


def spectral_unstack(s: Tensor, h: int, w: int) -> Tensor:
    """Inverse of :func:`spectral_stack`: (N×)2C×H×(W/2+1) -> (N×)C×H×W."""
    _check_spatial(h, w, "spectral_unstack")
    wh = w // 2 + 1
    if s.shape[-3] % 2 or s.shape[-2:] != (h, wh):
        raise ShapeError(f"spectral_unstack: {s.shape} is not a stacked half spectrum for {h}×{w}")
    c = s.shape[-3] // 2
    lead = s.shape[:-3]
    br, bi = _inverse_matrices(h, w)
    sr = s.data[..., :c, :, :].reshape(-1, h * wh)
    si = s.data[..., c:, :, :].reshape(-1, h * wh)
    out = (sr @ br + si @ bi).reshape(lead + (c, h, w))

    def bw(g):
        gf = g.reshape(-1, h * w)
        gr = (gf @ br.T).reshape(lead + (c, h, wh))
        gi = (gf @ bi.T).reshape(lead + (c, h, wh))
        return (np.concatenate([gr, gi], axis=-3),)

    return _make(out, (s,), "spectral_unstack", bw)


def fourier_conv(x: Tensor, w: Tensor, b: Tensor, linear: bool = False) -> Tensor:
    """FFT -> 1×1 conv over stacked real/imag channels -> ReLU -> inverse FFT.

    ``linear=True`` drops the ReLU (used to check the identity mapping).
    """
    c = x.shape[-3]
    if w.shape != (2 * c, 2 * c, 1, 1):
        raise ShapeError(f"fourier_conv: weight {w.shape} must be {2 * c}×{2 * c}×1×1 for {c} input channels")
    h, wd = x.shape[-2:]
    s = spectral_stack(x)
    s = conv2d(s, w, b)
    if not linear:
        s = relu(s)
    return spectral_unstack(s, h, wd)
