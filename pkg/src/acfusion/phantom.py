"""Synthetic ground truth and the multi-view forward model.

A view at angle ``phi`` is the truth rotated by ``+phi`` about the vertical
axis, blurred by the detector-frame PSF, translated by a real-valued shift
(Fourier phase ramp) and corrupted by additive Gaussian noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .psf import PsfModel, rasterize_psf
from .spectral import LINEAR, convolve_arrays, irfftn, rfftn
from .volume import ViewStack, Volume, rotate_about_vertical, save_volume

KINDS = ("beads", "spheres", "shells", "tubes")
DEFAULT_ANGLES = tuple(float(a) for a in range(0, 360, 30))
SUPERSAMPLE = 5


@dataclass
class Phantom:
    """Geometry of a synthetic object.

    ``centers``/``radii``/``intensities`` describe beads, spheres and shells
    (``thickness`` applies to shells); ``paths`` holds tube waypoints. Any
    field left empty is drawn from ``seed``.
    """

    kind: str = "spheres"
    dims: tuple = (32, 32, 32)
    seed: int = 0
    count: int | None = None
    centers: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    intensities: list = field(default_factory=list)
    thickness: float = 1.5
    paths: list = field(default_factory=list)


@dataclass
class AcquisitionSpec:
    angles: Sequence[float] = DEFAULT_ANGLES
    psf: PsfModel | None = field(default_factory=PsfModel)
    shift_max: float = 0.0
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.shift_max < 0:
            raise ValueError("shift_max must be >= 0")


# --------------------------------------------------------------------------- #
# voxelization
# --------------------------------------------------------------------------- #


def _central_bounds(dims):
    return [(n / 4.0 - 0.5, 3.0 * n / 4.0 - 0.5) for n in dims]


def _check_inside(lo, hi, dims, what):
    for a, b, (blo, bhi) in zip(lo, hi, _central_bounds(dims)):
        if a < blo - 1e-9 or b > bhi + 1e-9:
            raise ValueError(f"{what} leaves the central half of a {tuple(dims)} grid")


def _coverage(out, lo, hi, inside):
    """Add the fraction of each voxel in the box [lo, hi] where ``inside`` holds."""
    lo = [max(0, int(math.floor(v))) for v in lo]
    hi = [min(n - 1, int(math.ceil(v))) for v, n in zip(hi, out.shape)]
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    axes = [
        (np.arange(a, b + 1)[:, None] + sub[None, :]).ravel() for a, b in zip(lo, hi)
    ]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    mask = inside(X, Y, Z).astype(np.float64)
    shape = []
    for a, b in zip(lo, hi):
        shape += [b - a + 1, SUPERSAMPLE]
    frac = mask.reshape(shape).mean(axis=(1, 3, 5))
    return (slice(lo[0], hi[0] + 1), slice(lo[1], hi[1] + 1), slice(lo[2], hi[2] + 1)), frac


def _add_ball(out, center, radius, value, inner=0.0):
    c = np.asarray(center, dtype=np.float64)
    if radius <= 0:
        idx = tuple(int(round(v)) for v in c)
        out[idx] += value
        return

    def inside(X, Y, Z):
        d2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
        return (d2 <= radius**2) & (d2 >= inner**2)

    sl, frac = _coverage(out, c - radius, c + radius, inside)
    out[sl] += value * frac


def _segment_distance2(X, Y, Z, p, q):
    d = q - p
    L2 = float(d @ d)
    t = ((X - p[0]) * d[0] + (Y - p[1]) * d[1] + (Z - p[2]) * d[2]) / max(L2, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return (X - p[0] - t * d[0]) ** 2 + (Y - p[1] - t * d[1]) ** 2 + (Z - p[2] - t * d[2]) ** 2


def _add_tube(out, waypoints, radius, value):
    pts = np.asarray(waypoints, dtype=np.float64)

    def inside(X, Y, Z):
        hit = np.zeros(X.shape, dtype=bool)
        for p, q in zip(pts[:-1], pts[1:]):
            hit |= _segment_distance2(X, Y, Z, p, q) <= radius**2
        return hit

    sl, frac = _coverage(out, pts.min(axis=0) - radius, pts.max(axis=0) + radius, inside)
    out[sl] = np.maximum(out[sl], value * frac)


def _random_geometry(p: Phantom) -> Phantom:
    rng = np.random.default_rng(p.seed)
    n = min(p.dims)
    bounds = _central_bounds(p.dims)
    if p.kind == "tubes":
        count = p.count or 2
        radius = max(1.0, n / 24)
        paths = []
        for _ in range(count):
            pts = [[rng.uniform(lo + radius, hi - radius) for lo, hi in bounds] for _ in range(3)]
            paths.append(pts)
        return Phantom(p.kind, p.dims, p.seed, count, radii=[radius] * count,
                       intensities=[1.0] * count, paths=paths)

    if p.kind == "beads":
        count, rlo, rhi = p.count or 6, 0.0, 0.0
    elif p.kind == "shells":
        count, rlo, rhi = p.count or 2, max(2.5, n / 10), max(3.0, n / 7)
    else:
        count, rlo, rhi = p.count or 4, max(2.0, n / 16), max(2.5, n / 8)
    centers, radii, values = [], [], []
    for _ in range(1000):
        if len(centers) == count:
            break
        r = float(rng.uniform(rlo, rhi))
        c = [float(rng.uniform(lo + r, hi - r)) for lo, hi in bounds]
        if p.kind == "beads":
            c = [float(round(v)) for v in c]
        if all(np.linalg.norm(np.subtract(c, c2)) > r + r2 + 1.0 for c2, r2 in zip(centers, radii)):
            centers.append(c)
            radii.append(r)
            values.append(float(rng.uniform(0.5, 1.0)))
    if len(centers) < count:
        raise ValueError(f"could not place {count} non-overlapping {p.kind} in {p.dims}")
    return Phantom(p.kind, p.dims, p.seed, count, centers, radii, values, p.thickness)


def resolve_geometry(spec: Phantom) -> Phantom:
    """``spec`` with any unset geometry drawn from its seed."""
    if spec.kind not in KINDS:
        raise ValueError(f"unknown phantom kind {spec.kind!r}")
    return spec if (spec.centers or spec.paths) else _random_geometry(spec)


def make_phantom(spec: Phantom, voxel_size=(1.0, 1.0, 1.0)) -> Volume:
    """Voxelize ``spec`` with anti-aliased (supersampled) boundaries."""
    geom = resolve_geometry(spec)
    dims = tuple(int(n) for n in spec.dims)
    out = np.zeros(dims, dtype=np.float64)
    if geom.kind == "tubes":
        for pts, r, val in zip(geom.paths, geom.radii, geom.intensities or [1.0] * len(geom.paths)):
            pts = np.asarray(pts, dtype=np.float64)
            _check_inside(pts.min(axis=0) - r, pts.max(axis=0) + r, dims, "tube")
            _add_tube(out, pts, r, val)
    else:
        values = geom.intensities or [1.0] * len(geom.centers)
        radii = geom.radii or [0.0] * len(geom.centers)
        for c, r, val in zip(geom.centers, radii, values):
            c = np.asarray(c, dtype=np.float64)
            _check_inside(c - r, c + r, dims, geom.kind[:-1])
            inner = max(0.0, r - geom.thickness) if geom.kind == "shells" else 0.0
            _add_ball(out, c, r, val, inner)
    return Volume(out, voxel_size)


# --------------------------------------------------------------------------- #
# forward model
# --------------------------------------------------------------------------- #


def fourier_shift(data: np.ndarray, shift: Sequence[float]) -> np.ndarray:
    """Circularly translate by a real-valued ``shift`` with a phase ramp."""
    shape = data.shape
    spec = rfftn(np.asarray(data, dtype=np.float64))
    freqs = [np.fft.fftfreq(n) for n in shape[:-1]] + [np.fft.rfftfreq(shape[-1])]
    ramp = np.ones(spec.shape, dtype=np.complex128)
    for ax, (f, s) in enumerate(zip(freqs, shift)):
        if s == 0:
            continue
        shp = [1, 1, 1]
        shp[ax] = f.size
        ramp = ramp * np.exp(-2j * np.pi * f * float(s)).reshape(shp)
    return irfftn(spec * ramp, s=shape)


def forward_view(
    truth: Volume,
    angle_deg: float,
    spec: AcquisitionSpec,
    shift: Sequence[float] = (0.0, 0.0, 0.0),
    rng: np.random.Generator | None = None,
) -> ViewStack:
    vol = rotate_about_vertical(truth, angle_deg)
    data = vol.data.astype(np.float64)
    if spec.psf is not None:
        h = rasterize_psf(spec.psf, truth.dims)
        data = convolve_arrays(data, h.data, LINEAR)
    if any(s != 0 for s in shift):
        data = fourier_shift(data, shift)
    if spec.noise > 0:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        sigma = spec.noise * float(data.max())
        data = np.clip(data + rng.normal(0.0, sigma, data.shape), 0.0, None)
    return ViewStack(truth.like(data), angle_deg, preprocessed=False)


def view_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for view ``index`` derived from the master seed."""
    return np.random.default_rng([int(seed), int(index)])


def draw_shifts(spec: AcquisitionSpec, dims) -> list:
    if spec.shift_max > min(dims) / 8.0:
        raise ValueError(f"shift_max {spec.shift_max} exceeds dims/8 for {tuple(dims)}")
    shifts = []
    for i, _ in enumerate(spec.angles):
        rng = view_rng(spec.seed, i)
        shifts.append([float(s) for s in rng.uniform(-spec.shift_max, spec.shift_max, 3)])
    return shifts


def simulate_views(truth: Volume, spec: AcquisitionSpec, shifts=None) -> tuple[list, list]:
    """All views of ``truth`` under ``spec``; returns ``(views, shifts)``."""
    shifts = draw_shifts(spec, truth.dims) if shifts is None else [list(map(float, s)) for s in shifts]
    views = []
    for i, (angle, s) in enumerate(zip(spec.angles, shifts)):
        rng = view_rng(spec.seed, i)
        rng.uniform(size=3)  # the shift draw, keep noise streams independent of it
        views.append(forward_view(truth, angle, spec, s, rng))
    return views, shifts


def make_dataset(truth: Volume, spec: AcquisitionSpec, outdir) -> dict:
    """Write views, truth and a JSON manifest to ``outdir``; returns the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    views, shifts = simulate_views(truth, spec)
    save_volume(truth, outdir / "truth.raw")
    entries = []
    for i, (v, s) in enumerate(zip(views, shifts)):
        name = f"view_{i:03d}.raw"
        save_volume(v.volume, outdir / name, extra={"angle_deg": v.angle_deg})
        entries.append({"file": name, "angle_deg": v.angle_deg, "shift_voxels": s})
    manifest = {
        "dims": list(truth.dims),
        "voxel_size_um": list(truth.voxel_size),
        "truth": "truth.raw",
        "angles_deg": [float(a) for a in spec.angles],
        "psf_sigma_voxels": list(spec.psf.sigma) if spec.psf is not None else None,
        "shift_max_voxels": spec.shift_max,
        "noise_rel_peak": spec.noise,
        "seed": spec.seed,
        "views": entries,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(outdir) -> tuple[dict, list]:
    """Manifest plus the raw (unpreprocessed) views of a simulated dataset."""
    from .volume import load_volume

    outdir = Path(outdir)
    with open(outdir / "manifest.json") as fh:
        manifest = json.load(fh)
    views = [
        ViewStack(load_volume(outdir / e["file"]), e["angle_deg"], preprocessed=False)
        for e in manifest["views"]
    ]
    return manifest, views


def phantom_to_dict(p: Phantom) -> dict:
    return asdict(p)
