"""Multi-view fusion: auto-correlation averaging and the register-then-average baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import CIRCULAR, LINEAR, AutocorrVolume, PadPolicy, autocorrelate_array, crosscorrelate_arrays
from .volume import Region, ViewStack, Volume, rotate_about_vertical, subtract_background


@dataclass(frozen=True)
class Displacement:
    m: tuple[int, int, int]

    def __iter__(self):
        return iter(self.m)


@dataclass
class FusedDataset:
    chi_bar: AutocorrVolume
    angles: list
    o_bar_direct: Volume | None = None
    H_bar: AutocorrVolume | None = None
    displacements: list | None = None

    @property
    def n_views(self) -> int:
        return len(self.angles)


def preprocess_view(raw: ViewStack, dark: Region | None = None) -> ViewStack:
    """Subtract the dark-region mean, then rotate back to the 0-degree frame."""
    if raw.preprocessed:
        raise ValueError(f"view at {raw.angle_deg} deg is already preprocessed")
    vol = raw.volume if dark is None else subtract_background(raw.volume, dark)
    vol = rotate_about_vertical(vol, -raw.angle_deg)
    return ViewStack(vol, raw.angle_deg, preprocessed=True)


def _check_views(views: Sequence[ViewStack]) -> tuple[int, int, int]:
    if not views:
        raise ValueError("need at least one view")
    dims = views[0].volume.dims
    for v in views:
        if not v.preprocessed:
            raise ValueError(f"view at {v.angle_deg} deg has not been preprocessed")
        if v.volume.dims != dims:
            raise ValueError(f"dims mismatch: {v.volume.dims} vs {dims}")
    return dims


def fuse_autocorrelations(views: Sequence[ViewStack], policy: PadPolicy = LINEAR) -> AutocorrVolume:
    """``|mean_i A{o_i}|`` over preprocessed views. No registration happens."""
    dims = _check_views(views)
    acc = None
    for v in views:
        chi = autocorrelate_array(v.volume.data, policy)
        acc = chi if acc is None else acc + chi
    acc = np.abs(acc / len(views))
    return AutocorrVolume(views[0].volume.like(acc), "native", dims)


def _signed(idx: int, n: int) -> int:
    return idx if idx <= n // 2 else idx - n


def register_pair(ref: Volume, mov: Volume) -> Displacement:
    """Integer shift ``m`` such that ``mov`` is ``ref`` translated by ``m``.

    Peak of the circular cross-correlation ``sum_x ref(x) mov(x + ξ)``;
    equal maxima resolve to the lexicographically smallest signed shift.
    """
    a = ref.data.astype(np.float64)
    b = mov.data.astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dims mismatch: {a.shape} vs {b.shape}")
    if not np.any(a) or not np.any(b):
        raise ValueError("cannot register an all-zero volume")
    xc = crosscorrelate_arrays(a, b, CIRCULAR)
    peak = xc.max()
    tol = 1e-9 * max(abs(peak), np.abs(xc).max())
    candidates = np.argwhere(xc >= peak - tol)
    signed = sorted(tuple(_signed(int(i), n) for i, n in zip(c, a.shape)) for c in candidates)
    return Displacement(signed[0])


def _reference_index(views: Sequence[ViewStack]) -> int:
    for i, v in enumerate(views):
        if v.angle_deg == 0.0:
            return i
    return 0


def fuse_direct(views: Sequence[ViewStack], return_displacements: bool = False):
    """Classical fusion: register every view to the 0-degree one, undo the
    integer shift circularly, and average."""
    _check_views(views)
    ref = views[_reference_index(views)].volume
    acc = np.zeros(ref.dims, dtype=np.float64)
    moves = []
    for v in views:
        m = register_pair(ref, v.volume)
        moves.append(m)
        acc += np.roll(v.volume.data.astype(np.float64), tuple(-s for s in m.m), axis=(0, 1, 2))
    fused = ref.like(acc / len(views))
    if return_displacements:
        return fused, moves
    return fused
