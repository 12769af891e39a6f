"""Fourier helpers for periodic fields on the uniform torus grid.

Fields store their grid axes last: a tensor with ``r`` slots on a torus of
real dimension ``d`` has shape ``(d,)*r + (N,)*d``.  All helpers take the
number of trailing grid axes explicitly so they work for any slot count.
"""

import numpy as np


def wavenumbers(n: int) -> np.ndarray:
    """Integer frequencies in FFT order (the Nyquist mode appears as -n/2)."""
    return np.fft.fftfreq(n, d=1.0 / n)


def frequency_grid(n: int, ndim: int) -> list[np.ndarray]:
    """Integer frequency arrays, one per grid axis, broadcast to ``(n,)*ndim``."""
    freqs = wavenumbers(n)
    return np.meshgrid(*([freqs] * ndim), indexing="ij")


def derivative(values: np.ndarray, axis_index: int, ndim: int, order: int = 1) -> np.ndarray:
    """Spectral derivative along grid axis ``axis_index`` (period 1).

    Odd derivatives drop the Nyquist mode so real fields stay real.
    """
    axis = values.ndim - ndim + axis_index
    n = values.shape[axis]
    symbol = 2j * np.pi * wavenumbers(n)
    if order % 2 == 1:
        symbol[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    spectrum = np.fft.fft(values, axis=axis)
    return np.fft.ifft(spectrum * (symbol ** order).reshape(shape), axis=axis)


def gradient(values: np.ndarray, ndim: int) -> np.ndarray:
    """All first derivatives, stacked on a new leading axis of length ``ndim``."""
    return np.stack([derivative(values, a, ndim) for a in range(ndim)])


def grid_mean(values: np.ndarray, ndim: int) -> np.ndarray:
    """Average over the trailing grid axes (the zero Fourier mode)."""
    return values.mean(axis=tuple(range(values.ndim - ndim, values.ndim)))


def remove_mean(values: np.ndarray, ndim: int) -> np.ndarray:
    mean = grid_mean(values, ndim)
    return values - mean.reshape(mean.shape + (1,) * ndim)


def fftn_grid(values: np.ndarray, ndim: int) -> np.ndarray:
    return np.fft.fftn(values, axes=tuple(range(values.ndim - ndim, values.ndim)))


def ifftn_grid(values: np.ndarray, ndim: int) -> np.ndarray:
    return np.fft.ifftn(values, axes=tuple(range(values.ndim - ndim, values.ndim)))


def spectral_tail(values: np.ndarray, ndim: int, band: int = 2) -> float:
    """Largest Fourier coefficient within ``band`` modes of Nyquist, relative to the largest.

    A fully resolved field has a tail near roundoff; an under-resolved one does not.
    """
    spectrum = np.abs(fftn_grid(values, ndim))
    n = values.shape[-1]
    freqs = frequency_grid(n, ndim)
    edge = np.zeros(freqs[0].shape, dtype=bool)
    for f in freqs:
        edge |= np.abs(f) >= n // 2 - band
    peak = spectrum.max()
    if peak == 0.0:
        return 0.0
    return float(spectrum[..., edge].max() / peak)
