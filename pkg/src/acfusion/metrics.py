"""Numeric comparison of reconstructions: NCC, MSE, line profiles, FWHM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .fusion import register_pair
from .volume import Volume, flip_array

# peaks less prominent than this fraction of the profile maximum are ignored
PEAK_PROMINENCE = 1e-3


@dataclass
class ProfileReport:
    positions: np.ndarray
    values: np.ndarray
    fwhm: float | None = None
    dip_contrast: float | None = None

    @property
    def samples(self) -> list:
        return list(zip(self.positions.tolist(), self.values.tolist()))


def _zncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0:
        raise ValueError("zero-variance input")
    return float(np.sum(a * b) / den)


def _register_roll(ref: Volume, b: np.ndarray) -> np.ndarray:
    m = register_pair(ref, ref.like(b)).m
    return np.roll(b, tuple(-s for s in m), axis=(0, 1, 2))


def align_to(a: Volume, b: Volume, allow_flip: bool = True) -> tuple[Volume, float]:
    """Translate (and possibly point-reflect) ``b`` onto ``a``.

    Returns the aligned copy of ``b`` and its zero-normalized
    cross-correlation with ``a``. Shifts are integer and circular.
    """
    if a.dims != b.dims:
        raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")
    da = a.data.astype(np.float64)
    db = b.data.astype(np.float64)
    if da.std() == 0 or db.std() == 0:
        raise ValueError("zero-variance input")
    cands = [db, flip_array(db)] if allow_flip else [db]
    best = None
    for c in cands:
        moved = _register_roll(a, c)
        score = _zncc(da, moved)
        if best is None or score > best[1]:
            best = (moved, score)
    return b.like(best[0]), best[1]


def ncc_after_alignment(a: Volume, b: Volume, allow_flip: bool = True) -> float:
    """Zero-normalized cross-correlation after integer registration of ``b`` to ``a``.

    With ``allow_flip`` the point reflection of ``b`` is tried too and the
    better score wins; auto-correlation inversion cannot tell the two apart.
    """
    return align_to(a, b, allow_flip)[1]


def mse(a: Volume, b: Volume) -> float:
    if a.dims != b.dims:
        raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def _crossing(x, y, i, j, half, spline):
    """Position between samples i and j where the profile crosses ``half``."""
    if spline is not None:
        return brentq(lambda t: spline(t) - half, x[i], x[j])
    return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i])


def fwhm(values, positions=None, method: str = "linear") -> float | None:
    """Full width at half maximum of the main peak of a 1D profile.

    Crossings are located by linear interpolation between samples, or on a
    cubic spline through them with ``method='cubic'``. Returns ``None`` when
    the profile is flat or does not fall below half maximum on both sides.
    """
    y = np.asarray(values, dtype=np.float64)
    x = np.arange(y.size, dtype=np.float64) if positions is None else np.asarray(positions, dtype=np.float64)
    k = int(np.argmax(y))
    peak = y[k]
    if peak <= 0 or np.allclose(y, peak):
        return None
    half = 0.5 * peak
    spline = CubicSpline(x, y) if method == "cubic" else None
    left = next((i for i in range(k, 0, -1) if y[i - 1] < half), None)
    right = next((i for i in range(k, y.size - 1) if y[i + 1] < half), None)
    if left is None or right is None:
        return None
    xl = _crossing(x, y, left - 1, left, half, spline)
    xr = _crossing(x, y, right, right + 1, half, spline)
    return float(xr - xl)


def axis_profile(v: Volume, axis: int, through=None) -> np.ndarray:
    """1D line along ``axis`` through ``through`` (default: the brightest voxel)."""
    d = v.data.astype(np.float64)
    idx = np.unravel_index(np.argmax(d), d.shape) if through is None else tuple(through)
    sl = list(idx)
    sl[axis] = slice(None)
    return d[tuple(sl)]


def axis_fwhm(v: Volume, axis: int, method: str = "cubic", through=None) -> float | None:
    """FWHM in voxels along ``axis`` through the brightest voxel."""
    return fwhm(axis_profile(v, axis, through), method=method)


def dip_contrast(values) -> float | None:
    """``(max - min between the two strongest peaks) / max``; ``None`` for < 2 peaks."""
    y = np.asarray(values, dtype=np.float64)
    top = y.max()
    if top <= 0:
        return None
    # pad so edge maxima count as peaks
    padded = np.concatenate([[-np.inf], y, [-np.inf]])
    peaks, props = signal.find_peaks(padded, prominence=PEAK_PROMINENCE * top)
    if peaks.size < 2:
        return None
    strongest = np.sort(peaks[np.argsort(padded[peaks])[-2:]]) - 1
    valley = y[strongest[0] : strongest[1] + 1].min()
    return float((top - valley) / top)


def line_profile(v: Volume, p0, p1, samples: int = 101) -> ProfileReport:
    """Trilinear samples from ``p0`` to ``p1`` (micrometers) with FWHM / dip contrast."""
    vs = np.asarray(v.voxel_size)
    a = np.asarray(p0, dtype=np.float64) / vs
    b = np.asarray(p1, dtype=np.float64) / vs
    upper = np.asarray(v.dims) - 1
    for p in (a, b):
        if np.any(p < -1e-9) or np.any(p > upper + 1e-9):
            raise ValueError(f"profile endpoint {p * vs} um lies outside the volume")
    if samples < 2:
        raise ValueError("need at least two samples")
    t = np.linspace(0.0, 1.0, samples)
    coords = a[:, None] + (b - a)[:, None] * t[None, :]
    vals = ndimage.map_coordinates(v.data.astype(np.float64), coords, order=1, mode="nearest")
    length = float(np.linalg.norm((b - a) * vs))
    pos = t * length
    dip = dip_contrast(vals)
    width = fwhm(vals, pos) if dip is None else None
    return ProfileReport(pos, vals, width, dip)
