"""Fractional FFT via Bluestein's chirp factorisation."""

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def frft(x, gamma: float):
    """Fractional DFT ``X_k = sum_n x_n exp(-2 pi i gamma k n)``, ``k = 0..N-1``.

    Uses ``kn = (k^2 + n^2 - (k - n)^2) / 2`` so the sum becomes a linear
    convolution with a chirp, evaluated with three FFTs of length ``2N``.
    ``gamma = 1/N`` reproduces the ordinary DFT.
    """
    x = np.asarray(x, dtype=complex)
    N = x.shape[-1]
    if not _is_pow2(N):
        raise ValueError(f"frft length must be a power of two, got {N}")
    n = np.arange(N)
    # reduce n^2 gamma mod 2 before forming the phase to keep it accurate
    half_phase = np.pi * np.mod(gamma * n.astype(float) ** 2, 2.0)
    chirp = np.exp(-1j * half_phase)
    y = np.zeros(x.shape[:-1] + (2 * N,), dtype=complex)
    y[..., :N] = x * chirp
    z = np.zeros(2 * N, dtype=complex)
    z[:N] = np.conj(chirp)
    z[N + 1:] = np.conj(chirp[1:][::-1])
    conv = np.fft.ifft(np.fft.fft(y) * np.fft.fft(z))
    return chirp * conv[..., :N]


def direct_fractional_dft(x, gamma: float):
    """O(N^2) reference summation."""
    x = np.asarray(x, dtype=complex)
    n = np.arange(x.shape[-1])
    return np.exp(-2j * np.pi * gamma * np.outer(n, n)) @ x
