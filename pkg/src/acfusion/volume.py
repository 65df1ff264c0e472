"""Dense 3D volumes: geometry conventions, raw+JSON I/O and voxel primitives.

Arrays are indexed ``data[x, y, z]`` (x lateral, y transverse/vertical,
z longitudinal). On disk the payload is x-fastest, i.e. Fortran order.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

AXES = {"x": 0, "y": 1, "z": 2}


class VolumeFormatError(ValueError):
    """Raised when a raw volume and its sidecar disagree or are malformed."""


@dataclass(frozen=True)
class Volume:
    """Dense scalar grid with voxel-size metadata (micrometers per voxel)."""

    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if data.dtype != np.float32:
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        vs = tuple(float(s) for s in self.voxel_size)
        if len(vs) != 3 or min(vs) <= 0:
            raise ValueError(f"voxel_size must be three positive numbers, got {self.voxel_size}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def like(self, data) -> "Volume":
        """New volume on the same voxel grid."""
        return Volume(data, self.voxel_size)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.voxel_size == other.voxel_size and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class ViewStack:
    """One acquisition: a volume plus its rotation angle about the vertical axis."""

    volume: Volume
    angle_deg: float = 0.0
    preprocessed: bool = False

    def __post_init__(self):
        angle = float(self.angle_deg) % 360.0
        object.__setattr__(self, "angle_deg", angle)


@dataclass(frozen=True)
class Region:
    origin: tuple[int, int, int]
    extent: tuple[int, int, int]

    def check(self, dims: Sequence[int]) -> None:
        if any(e <= 0 for e in self.extent):
            raise ValueError(f"empty region {self}")
        for o, e, n in zip(self.origin, self.extent, dims):
            if o < 0 or o + e > n:
                raise ValueError(f"region {self} not contained in dims {tuple(dims)}")

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    @classmethod
    def parse(cls, text: str) -> "Region":
        vals = [int(v) for v in text.split(",")]
        if len(vals) != 6:
            raise ValueError(f"region needs x0,y0,z0,dx,dy,dz; got {text!r}")
        return cls(tuple(vals[:3]), tuple(vals[3:]))


# --------------------------------------------------------------------------- #
# I/O
# --------------------------------------------------------------------------- #


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def save_volume(v: Volume, path, extra: dict | None = None) -> None:
    """Write ``v`` as little-endian float32 (x-fastest) plus a JSON sidecar.

    ``extra`` keys are merged into the sidecar (e.g. ``layout`` for
    auto-correlation exports).
    """
    path = Path(path)
    payload = np.asarray(v.data, dtype="<f4").ravel(order="F")
    with open(path, "wb") as fh:
        fh.write(payload.tobytes())
    meta = {"dims": list(v.dims), "voxel_size_um": list(v.voxel_size)}
    if extra:
        meta.update(extra)
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path) -> dict:
    side = sidecar_path(path)
    if not side.exists():
        raise VolumeFormatError(f"missing sidecar {side}")
    with open(side) as fh:
        return json.load(fh)


def load_volume(path) -> Volume:
    path = Path(path)
    meta = read_sidecar(path)
    try:
        dims = tuple(int(n) for n in meta["dims"])
        voxel_size = tuple(float(s) for s in meta.get("voxel_size_um", (1.0, 1.0, 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"malformed sidecar for {path}: {exc}") from exc
    if len(dims) != 3 or min(dims) <= 0:
        raise VolumeFormatError(f"bad dims {dims} in sidecar for {path}")
    expected = math.prod(dims) * 4
    size = os.path.getsize(path)
    if size != expected:
        raise VolumeFormatError(
            f"{path}: payload has {size} bytes, sidecar dims {dims} need {expected}"
        )
    flat = np.fromfile(path, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise VolumeFormatError(f"{path}: payload contains non-finite values")
    data = flat.reshape(dims, order="F").astype(np.float32)
    return Volume(data, voxel_size)


# --------------------------------------------------------------------------- #
# geometry
# --------------------------------------------------------------------------- #


def pad_to(v: Volume, target_dims: Sequence[int]) -> Volume:
    """Center ``v`` in a zero field of ``target_dims`` (offset floor((T-n)/2))."""
    target = tuple(int(t) for t in target_dims)
    if any(t < n for t, n in zip(target, v.dims)):
        raise ValueError(f"cannot pad {v.dims} down to {target}")
    out = np.zeros(target, dtype=np.float32)
    sl = tuple(slice((t - n) // 2, (t - n) // 2 + n) for t, n in zip(target, v.dims))
    out[sl] = v.data
    return v.like(out)


def crop_center(v: Volume, target_dims: Sequence[int]) -> Volume:
    """Inverse of :func:`pad_to`."""
    target = tuple(int(t) for t in target_dims)
    if any(t > n for t, n in zip(target, v.dims)):
        raise ValueError(f"cannot crop {v.dims} up to {target}")
    sl = tuple(slice((n - t) // 2, (n - t) // 2 + t) for t, n in zip(target, v.dims))
    return v.like(v.data[sl].copy())


def flip_array(a: np.ndarray) -> np.ndarray:
    """Circular coordinate reversal: ``out[i] = a[-i mod n]`` on every axis."""
    out = a[::-1, ::-1, ::-1]
    return np.roll(out, 1, axis=(0, 1, 2))


def flip(v: Volume) -> Volume:
    return v.like(flip_array(v.data))


def shift_circular(v: Volume, shift: Sequence[int]) -> Volume:
    return v.like(np.roll(v.data, tuple(int(s) for s in shift), axis=(0, 1, 2)))


_EXACT_TRIG = {0: (1.0, 0.0), 90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}


def _trig(angle_deg: float) -> tuple[float, float]:
    a = float(angle_deg) % 360.0
    if a in _EXACT_TRIG:
        return _EXACT_TRIG[int(a)]
    r = math.radians(a)
    return math.cos(r), math.sin(r)


def rotate_about_vertical(v: Volume, angle_deg: float, center=None) -> Volume:
    """Rotate about the y axis by ``angle_deg`` (positive takes +z toward +x).

    Trilinear resampling with zero fill. ``center`` defaults to the grid
    center ``(n-1)/2``; only its x and z components matter. Multiples of 90
    degrees use exact trigonometry, so every sample lands on a voxel and the
    result is an exact index permutation.
    """
    if float(angle_deg) % 360.0 == 0.0:
        return v.like(v.data.copy())
    nx, ny, nz = v.dims
    if center is None:
        cx, cz = (nx - 1) / 2.0, (nz - 1) / 2.0
    else:
        cx, cz = float(center[0]), float(center[2])
    c, s = _trig(angle_deg)
    x = np.arange(nx, dtype=np.float64)[:, None] - cx
    z = np.arange(nz, dtype=np.float64)[None, :] - cz
    # inverse map: output (x, z) samples input at R(-angle) (x, z)
    src_x = cx + c * x - s * z
    src_z = cz + s * x + c * z
    src_x = np.broadcast_to(src_x[:, None, :], (nx, ny, nz))
    src_z = np.broadcast_to(src_z[:, None, :], (nx, ny, nz))
    src_y = np.broadcast_to(np.arange(ny, dtype=np.float64)[None, :, None], (nx, ny, nz))
    out = ndimage.map_coordinates(
        v.data.astype(np.float64), [src_x, src_y, src_z], order=1, mode="constant", cval=0.0
    )
    return v.like(out)


# --------------------------------------------------------------------------- #
# radiometry / display
# --------------------------------------------------------------------------- #


def subtract_background(v: Volume, dark: Region) -> Volume:
    """Subtract the mean of ``dark``. Negative results are kept."""
    dark.check(v.dims)
    level = float(np.mean(v.data[dark.slices], dtype=np.float64))
    return v.like(v.data.astype(np.float64) - level)


def mip(v: Volume, axis: str | int = "z") -> np.ndarray:
    """Maximum intensity projection along ``axis``."""
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    return v.data.max(axis=ax)


def save_pgm16(image: np.ndarray, path) -> dict:
    """Write a 2D image as binary 16-bit PGM (P5) with linear min-max scaling.

    The scaling is also written to ``<path>.json`` and returned.
    """
    path = Path(path)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros(img.shape) if span == 0 else (img - lo) / span * 65535.0
    pix = np.rint(scaled).astype(">u2")
    # PGM rows run along the second array axis
    rows, cols = pix.shape[1], pix.shape[0]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pix.T).tobytes())
    meta = {"min": lo, "max": hi, "maxval": 65535, "width": cols, "height": rows}
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise VolumeFormatError(f"{path} is not a binary PGM")
    cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    body = raw[pos + 1 :]
    pix = np.frombuffer(body, dtype=">u2" if maxval > 255 else "u1", count=rows * cols)
    return pix.reshape(rows, cols).T.astype(np.uint16)
