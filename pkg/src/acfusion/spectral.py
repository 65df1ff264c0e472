"""FFT-backed convolution, cross-correlation and auto-correlation.

Conventions (real inputs)::

    convolution        (a * b)(x)  = sum_y a(y) b(x - y)
    cross-correlation  (a ⋆ b)(ξ)  = sum_x a(x) b(x + ξ)
    auto-correlation   A{a}        = a ⋆ a,  F{A{a}} = |F{a}|^2

Correlation outputs live in shift space and use the *fft-native* layout
(zero shift at index 0). Under the linear policy inputs are zero padded to a
7-smooth size >= 2n-1 per axis so no lag aliases.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .volume import Volume, load_volume, read_sidecar, save_volume

_WORKERS = max(1, int(os.environ.get("ACFUSION_THREADS", "1")))


def set_threads(n: int) -> None:
    """Cap the worker count used by every FFT in the package."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def get_threads() -> int:
    return _WORKERS


def rfftn(a, s=None):
    return sfft.rfftn(a, s=s, workers=_WORKERS)


def irfftn(a, s):
    return sfft.irfftn(a, s=s, workers=_WORKERS)


def fast_len(n: int) -> int:
    """Smallest integer >= n whose prime factors are all in {2, 3, 5, 7}."""
    m = max(1, int(n))
    while True:
        k = m
        for p in (2, 3, 5, 7):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 1


@dataclass(frozen=True)
class PadPolicy:
    mode: str = "linear"

    def __post_init__(self):
        if self.mode not in ("linear", "circular"):
            raise ValueError(f"pad mode must be 'linear' or 'circular', got {self.mode!r}")

    def shift_dims(self, dims: Sequence[int]) -> tuple[int, int, int]:
        """Grid size of the shift space for inputs of size ``dims``."""
        if self.mode == "circular":
            return tuple(int(n) for n in dims)
        return tuple(fast_len(2 * int(n) - 1) for n in dims)


LINEAR = PadPolicy("linear")
CIRCULAR = PadPolicy("circular")


@dataclass(frozen=True)
class AutocorrVolume:
    """A volume over shift space with an explicit zero-shift position.

    ``source_dims`` records the direct-space grid the correlation came from
    (``None`` when unknown, e.g. after loading an export without it).
    """

    volume: Volume
    layout: str = "native"
    source_dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.layout not in ("native", "centered"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.source_dims is not None:
            object.__setattr__(self, "source_dims", tuple(int(n) for n in self.source_dims))

    @property
    def data(self) -> np.ndarray:
        return self.volume.data

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.volume.dims

    @property
    def zero_shift_index(self) -> tuple[int, int, int]:
        if self.layout == "native":
            return (0, 0, 0)
        return tuple(n // 2 for n in self.dims)

    def with_data(self, data) -> "AutocorrVolume":
        return AutocorrVolume(self.volume.like(data), self.layout, self.source_dims)


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {a.shape} vs {b.shape}")


def convolve_arrays(a: np.ndarray, b: np.ndarray, policy: PadPolicy = LINEAR) -> np.ndarray:
    """Convolution of equally sized arrays, returned in float64.

    Circular mode is the cyclic convolution on the input grid. Linear mode
    computes the full zero-padded convolution and returns the block of input
    size whose origin sits at ``b``'s center voxel ``n // 2``, so a kernel
    centered there (the PSF convention) causes no shift.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    if policy.mode == "circular":
        return irfftn(rfftn(a) * rfftn(b), s=a.shape)
    size = policy.shift_dims(a.shape)
    full = irfftn(rfftn(a, s=size) * rfftn(b, s=size), s=size)
    sl = tuple(slice(n // 2, n // 2 + n) for n in a.shape)
    return full[sl]


def crosscorrelate_arrays(a: np.ndarray, b: np.ndarray, policy: PadPolicy = LINEAR) -> np.ndarray:
    """``sum_x a(x) b(x + ξ)`` on the policy's shift grid, fft-native layout."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    size = policy.shift_dims(a.shape)
    return irfftn(np.conj(rfftn(a, s=size)) * rfftn(b, s=size), s=size)


def autocorrelate_array(a: np.ndarray, policy: PadPolicy = LINEAR) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    size = policy.shift_dims(a.shape)
    spec = rfftn(a, s=size)
    return irfftn(spec.real**2 + spec.imag**2, s=size)


def fft_convolve(a: Volume, b: Volume, policy: PadPolicy = LINEAR) -> Volume:
    return a.like(convolve_arrays(a.data, b.data, policy))


def fft_crosscorrelate(a: Volume, b: Volume, policy: PadPolicy = LINEAR) -> Volume:
    return a.like(crosscorrelate_arrays(a.data, b.data, policy))


def autocorrelate(a: Volume, policy: PadPolicy = LINEAR) -> AutocorrVolume:
    """Auto-correlation via the power spectrum (Wiener-Khinchin).

    The result is even and, for non-negative input, peaks at zero shift.
    """
    return AutocorrVolume(a.like(autocorrelate_array(a.data, policy)), "native", a.dims)


def to_centered(x: AutocorrVolume) -> AutocorrVolume:
    if x.layout != "native":
        raise ValueError("already centered")
    data = np.roll(x.data, tuple(n // 2 for n in x.dims), axis=(0, 1, 2))
    return AutocorrVolume(x.volume.like(data), "centered", x.source_dims)


def to_native(x: AutocorrVolume) -> AutocorrVolume:
    if x.layout != "centered":
        raise ValueError("already fft-native")
    data = np.roll(x.data, tuple(-(n // 2) for n in x.dims), axis=(0, 1, 2))
    return AutocorrVolume(x.volume.like(data), "native", x.source_dims)


def evenness_error(x: AutocorrVolume) -> float:
    """Max relative deviation from ``χ(ξ) == χ(-ξ)``."""
    native = x if x.layout == "native" else to_native(x)
    d = native.data.astype(np.float64)
    mirrored = np.roll(d[::-1, ::-1, ::-1], 1, axis=(0, 1, 2))
    scale = max(float(np.abs(d).max()), np.finfo(np.float64).tiny)
    return float(np.abs(d - mirrored).max() / scale)


def save_autocorr(x: AutocorrVolume, path) -> None:
    extra = {"layout": x.layout}
    if x.source_dims is not None:
        extra["source_dims"] = list(x.source_dims)
    save_volume(x.volume, path, extra=extra)


def load_autocorr(path) -> AutocorrVolume:
    meta = read_sidecar(path)
    return AutocorrVolume(load_volume(path), meta.get("layout", "native"), meta.get("source_dims"))
