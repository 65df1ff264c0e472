"""Anisotropic Gaussian PSFs and their auto-correlation-space counterparts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import LINEAR, AutocorrVolume, PadPolicy, autocorrelate_array
from .volume import Volume, rotate_about_vertical

# largest mass we allow a grid to truncate
TRUNCATION_LIMIT = 1e-6


@dataclass(frozen=True)
class PsfModel:
    """Separable Gaussian; ``sigma`` in voxels, elongated along z by convention."""

    sigma: tuple[float, float, float] = (1.0, 1.0, 3.0)

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigma)
        if len(sig) != 3 or min(sig) <= 0:
            raise ValueError(f"sigma must be three positive values, got {self.sigma}")
        object.__setattr__(self, "sigma", sig)

    @property
    def fwhm(self) -> tuple[float, float, float]:
        k = 2.0 * math.sqrt(2.0 * math.log(2.0))
        return tuple(k * s for s in self.sigma)


def psf_center(dims: Sequence[int]) -> tuple[int, int, int]:
    return tuple(int(n) // 2 for n in dims)


def truncated_mass(m: PsfModel, dims: Sequence[int]) -> float:
    """Fraction of the continuous Gaussian's mass falling outside the grid."""
    kept = 1.0
    for s, n, c in zip(m.sigma, dims, psf_center(dims)):
        lo = (-c - 0.5) / (s * math.sqrt(2.0))
        hi = (n - 1 - c + 0.5) / (s * math.sqrt(2.0))
        kept *= 0.5 * (math.erf(hi) - math.erf(lo))
    return 1.0 - kept


def rasterize_psf(m: PsfModel, dims: Sequence[int], voxel_size=(1.0, 1.0, 1.0)) -> Volume:
    """Point-sampled Gaussian centered on voxel ``n // 2``, normalized to sum 1."""
    dims = tuple(int(n) for n in dims)
    lost = truncated_mass(m, dims)
    if lost >= TRUNCATION_LIMIT:
        raise ValueError(
            f"grid {dims} truncates {lost:.2e} of a Gaussian with sigma {m.sigma}"
        )
    profiles = [
        np.exp(-0.5 * ((np.arange(n) - c) / s) ** 2)
        for n, c, s in zip(dims, psf_center(dims), m.sigma)
    ]
    h = profiles[0][:, None, None] * profiles[1][None, :, None] * profiles[2][None, None, :]
    return Volume(h / h.sum(), voxel_size)


def psf_for_view(m: PsfModel, angle_deg: float, dims, voxel_size=(1.0, 1.0, 1.0)) -> Volume:
    """PSF acting on a view once it is rotated back to the reference frame.

    The scanning PSF is fixed in the detector frame; undoing the sample
    rotation turns it by ``-angle_deg``.
    """
    h = rasterize_psf(m, dims, voxel_size)
    if float(angle_deg) % 360.0 == 0.0:
        return h
    rot = rotate_about_vertical(h, -float(angle_deg), center=psf_center(dims))
    data = np.clip(rot.data.astype(np.float64), 0.0, None)
    return h.like(data / data.sum())


def _check_angles(angles) -> list[float]:
    angles = [float(a) for a in angles]
    if not angles:
        raise ValueError("need at least one angle")
    return angles


def average_direct_psf(m: PsfModel, angles, dims, voxel_size=(1.0, 1.0, 1.0)) -> Volume:
    angles = _check_angles(angles)
    acc = np.zeros(tuple(dims), dtype=np.float64)
    for a in angles:
        acc += psf_for_view(m, a, dims, voxel_size).data
    acc /= len(angles)
    return Volume(acc / acc.sum(), voxel_size)


def average_autocorr_psf(
    m: PsfModel, angles, dims, policy: PadPolicy = LINEAR, voxel_size=(1.0, 1.0, 1.0)
) -> AutocorrVolume:
    """Mean over views of the auto-correlated per-view PSF."""
    angles = _check_angles(angles)
    acc = None
    for a in angles:
        h = psf_for_view(m, a, dims, voxel_size).data.astype(np.float64)
        chi = autocorrelate_array(h, policy)
        acc = chi if acc is None else acc + chi
    # same absolute-value step as the fused data; removes FFT round-off negatives
    acc = np.abs(acc / len(angles))
    return AutocorrVolume(Volume(acc, voxel_size), "native", tuple(dims))


def _reflect_about(a: np.ndarray, center) -> np.ndarray:
    out = a
    for ax, c in enumerate(center):
        n = a.shape[ax]
        out = np.take(out, (2 * c - np.arange(n)) % n, axis=ax)
    return out


def effective_psf(Hbar: AutocorrVolume, init: Volume, opts=None, symmetric: bool = True) -> Volume:
    """Direct-space kernel whose auto-correlation is ``Hbar``.

    Runs Schulz-Snyder de-autocorrelation starting from ``init`` (normally
    the 0-degree PSF) and returns the estimate on ``init``'s grid with unit
    sum.

    Parameters
    ----------
    Hbar : AutocorrVolume
        Averaged auto-correlated PSF.
    init : Volume
        Starting kernel; also fixes the output grid.
    opts : SolverOptions, optional
        Defaults to 5000 iterations.
    symmetric : bool
        Project every iterate onto kernels that are point symmetric about the
        peak of ``init``. The mean of rotated Gaussians is point symmetric,
        and SS keeps that symmetry only in exact arithmetic: round-off grows
        into a lopsided kernel over a few thousand iterations.
    """
    from .solvers import SolverError, SolverOptions, _Problem, initial_state

    opts = opts or SolverOptions(iterations=5000, log_every=0)
    state = initial_state(Hbar, init)
    o = state.estimate
    center = np.unravel_index(np.argmax(o), o.shape)
    problem = _Problem(Hbar)
    for t in range(opts.iterations):
        o, _ = problem.ss(o, opts.epsilon)
        if symmetric:
            o = 0.5 * (o + _reflect_about(o, center))
        if not np.all(np.isfinite(o)):
            raise SolverError(f"non-finite values in estimate at iteration {t + 1}")
    state.estimate = o
    est = state.to_volume()
    data = np.clip(est.data.astype(np.float64), 0.0, None)
    return est.like(data / data.sum())
