"""Dense-array substrate: real FFT pair, reverse-mode tape, gradient checking."""

from .fft import EmptyInputError, InvalidSpectrumError, Spectrum, fft_real, ifft_real
from .gradcheck import check_tensor_fn, grad_check
from .tensor import Tensor, leaf

__all__ = [
    "EmptyInputError",
    "InvalidSpectrumError",
    "Spectrum",
    "Tensor",
    "check_tensor_fn",
    "fft_real",
    "grad_check",
    "ifft_real",
    "leaf",
]
