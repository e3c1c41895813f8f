"""Real-input FFT pair in the half-spectrum layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyInputError(ValueError):
    pass


class InvalidSpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Half spectrum of a length-``length`` real signal.

    ``coefficients`` holds the ``length // 2 + 1`` non-negative frequency bins.
    """

    length: int
    coefficients: np.ndarray

    def __post_init__(self):
        expected = self.length // 2 + 1
        if self.length < 1 or self.coefficients.shape[-1] != expected:
            raise InvalidSpectrumError(
                f"spectrum of length {self.length} needs {expected} coefficients, "
                f"got {self.coefficients.shape[-1]}"
            )


def fft_real(signal) -> Spectrum:
    x = np.asarray(signal, dtype=np.float64)
    if x.shape[-1] == 0:
        raise EmptyInputError("fft_real needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite value in fft_real input")
    return Spectrum(x.shape[-1], np.fft.rfft(x, axis=-1))


def ifft_real(spec: Spectrum, tol: float = 1e-9) -> np.ndarray:
    c = spec.coefficients
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    # Bin 0, and bin N/2 for even N, are real for any real signal.
    if np.any(np.abs(c[..., 0].imag) > tol * scale):
        raise InvalidSpectrumError("DC coefficient has a non-zero imaginary part")
    if spec.length % 2 == 0 and np.any(np.abs(c[..., -1].imag) > tol * scale):
        raise InvalidSpectrumError("Nyquist coefficient has a non-zero imaginary part")
    return np.fft.irfft(c, n=spec.length, axis=-1)


def rfft_axis(x: np.ndarray, axis: int) -> np.ndarray:
    return np.fft.rfft(x, axis=axis)


def irfft_axis(c: np.ndarray, n: int, axis: int) -> np.ndarray:
    return np.fft.irfft(c, n=n, axis=axis)
