"""Command-line front end: simulate -> fuse -> reconstruct -> metrics.

Every subcommand writes its outputs into one directory together with a
``run.json`` provenance record (config, input hashes, versions, wall time).
A ``run.json`` can be fed back through ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import plotting
from .fusion import fuse_autocorrelations, fuse_direct, preprocess_view
from .metrics import align_to, axis_profile, line_profile, mse
from .phantom import (
    DEFAULT_ANGLES, KINDS, AcquisitionSpec, Phantom, make_dataset, make_phantom, phantom_to_dict,
    resolve_geometry,
)
from .psf import PsfModel, average_autocorr_psf, average_direct_psf, effective_psf, rasterize_psf
from .solvers import SolverError, SolverOptions, solve
from .spectral import AutocorrVolume, PadPolicy, load_autocorr, save_autocorr, set_threads, to_centered
from .volume import AXES, Region, ViewStack, Volume, VolumeFormatError, load_volume, mip, save_pgm16, save_volume

log = logging.getLogger("acfusion")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONTRACT = 4
EXIT_SOLVER = 5

EXIT_CODES = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_INTERNAL}  unexpected internal error
  {EXIT_USAGE}  usage error (unknown subcommand or flag, missing option)
  {EXIT_INPUT}  missing or malformed input file
  {EXIT_CONTRACT}  invalid parameter or input contents
  {EXIT_SOLVER}  solver failure (non-finite iterate, unusable data)

environment:
  ACFUSION_THREADS  default FFT worker count (overridden by --threads)
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports usage errors on a single line."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_volume(path) -> dict:
    path = Path(path)
    out = {str(path): _sha256(path)}
    side = path.with_suffix(".json")
    if side.exists():
        out[str(side)] = _sha256(side)
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _export_mip(v: Volume, path, axis="z") -> None:
    save_pgm16(mip(v, axis), path)


# --- subcommands -------------------------------------------------------------


def cmd_simulate(a, out: Path) -> dict:
    dims = (a.dims,) * 3
    angles = a.angles if a.angles is not None else list(DEFAULT_ANGLES)
    psf = PsfModel(tuple(a.sigma))
    ph = resolve_geometry(Phantom(a.phantom, dims, seed=a.seed, count=a.count))
    truth = make_phantom(ph)
    spec = AcquisitionSpec(angles=tuple(angles), psf=psf, shift_max=a.shift_max, noise=a.noise, seed=a.seed)
    manifest = make_dataset(truth, spec, out)
    manifest["phantom"] = phantom_to_dict(ph)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _export_mip(truth, out / "truth_mip_z.pgm")
    plotting.plot_volume_mips(truth, out / "truth_mips.png", "truth")
    return {"inputs": {}, "outputs": ["manifest.json", "truth.raw"] + [e["file"] for e in manifest["views"]]}


def _load_views(a) -> tuple[list, dict]:
    d = Path(a.views)
    if not d.is_dir():
        raise FileNotFoundError(f"views directory {d} does not exist")
    inputs = {}
    man = d / "manifest.json"
    if man.exists():
        with open(man) as fh:
            manifest = json.load(fh)
        files = [e["file"] for e in manifest["views"]]
        angles = [float(e["angle_deg"]) for e in manifest["views"]]
        inputs.update({str(man): _sha256(man)})
    else:
        files = sorted(p.name for p in d.glob("view_*.raw"))
        angles = None
    if a.angles is not None:
        angles = list(a.angles)
    if angles is None:
        raise UsageError("--angles is required when the views directory has no manifest.json")
    if not files:
        raise FileNotFoundError(f"no view_*.raw files in {d}")
    if len(files) != len(angles):
        raise ValueError(f"{len(files)} views but {len(angles)} angles")
    dark = Region.parse(a.dark) if a.dark else None
    views = []
    for f, ang in zip(files, angles):
        vol = load_volume(d / f)
        inputs.update(_hash_volume(d / f))
        views.append(preprocess_view(ViewStack(vol, ang), dark))
    return views, inputs


def cmd_fuse(a, out: Path) -> dict:
    views, inputs = _load_views(a)
    policy = PadPolicy(a.pad)
    chi = fuse_autocorrelations(views, policy)
    save_autocorr(chi, out / "chi_bar.raw")
    save_volume(views[0].volume, out / "view0_pre.raw", extra={"angle_deg": views[0].angle_deg})
    _export_mip(to_centered(chi).volume, out / "chi_bar_mip_z.pgm")
    outputs = ["chi_bar.raw", "view0_pre.raw"]
    record = {"angles_deg": [v.angle_deg for v in views], "pad": policy.mode}
    if a.baseline:
        fused, moves = fuse_direct(views, return_displacements=True)
        save_volume(fused, out / "o_bar_direct.raw")
        _write_csv(out / "displacements.csv", ["view", "angle_deg", "mx", "my", "mz"],
                   [(i, v.angle_deg, *m.m) for i, (v, m) in enumerate(zip(views, moves))])
        record["displacements"] = [list(m.m) for m in moves]
        outputs += ["o_bar_direct.raw", "displacements.csv"]
    return {"inputs": inputs, "outputs": outputs, "fusion": record}


def cmd_baseline(a, out: Path) -> dict:
    views, inputs = _load_views(a)
    fused, moves = fuse_direct(views, return_displacements=True)
    save_volume(fused, out / "o_bar_direct.raw")
    _write_csv(out / "displacements.csv", ["view", "angle_deg", "mx", "my", "mz"],
               [(i, v.angle_deg, *m.m) for i, (v, m) in enumerate(zip(views, moves))])
    _export_mip(fused, out / "o_bar_direct_mip_z.pgm")
    plotting.plot_volume_mips(fused, out / "o_bar_direct_mips.png", "aligned mean")
    return {"inputs": inputs, "outputs": ["o_bar_direct.raw", "displacements.csv"]}


def _resolve_init(a, chi_path: Path) -> Path:
    if a.init != "auto":
        return Path(a.init)
    # the aligned mean is the closer guess when a baseline was fused alongside
    for name in ("o_bar_direct.raw", "view0_pre.raw"):
        cand = chi_path.parent / name
        if cand.exists():
            return cand
    raise FileNotFoundError(f"--init auto found neither o_bar_direct.raw nor view0_pre.raw next to {chi_path}")


def cmd_reconstruct(a, out: Path) -> dict:
    chi_path = Path(a.chi)
    chi = load_autocorr(chi_path)
    inputs = _hash_volume(chi_path)
    init_path = _resolve_init(a, chi_path)
    init = load_volume(init_path)
    inputs.update(_hash_volume(init_path))
    # measured views may dip below zero after background subtraction
    init = init.like(np.clip(init.data, 0.0, None))
    H = None
    if a.method == "au":
        if not a.psf_acorr:
            raise UsageError("--psf-acorr is required for --method au")
        H = load_autocorr(a.psf_acorr)
        inputs.update(_hash_volume(a.psf_acorr))
    opts = SolverOptions(iterations=a.iters, epsilon=a.epsilon, log_every=a.log_every)
    state = solve(chi, init, a.method, H, opts)
    recon = state.to_volume()
    out_vol = out / Path(a.out_name).name
    save_volume(recon, out_vol, extra={"method": a.method, "iterations": state.t})
    stem = out_vol.with_suffix("")
    _write_csv(f"{stem}_trace.csv", ["t", "idiv", "flux"], state.trace)
    _export_mip(recon, f"{stem}_mip_z.pgm")
    plotting.plot_trace(state.trace, f"{stem}_trace.png", f"{a.method.upper()} convergence")
    plotting.plot_volume_mips(recon, f"{stem}_mips.png", a.method.upper())
    return {
        "inputs": inputs,
        "init": str(init_path),
        "outputs": [out_vol.name, f"{stem.name}_trace.csv"],
        "final": {"t": state.t, "idiv": state.trace[-1][1], "flux": state.trace[-1][2]},
    }


def _profile_points(text) -> tuple[list, list]:
    vals = _floats(text)
    if len(vals) != 6:
        raise UsageError(f"--profile needs x0,y0,z0,x1,y1,z1 in um, got {text!r}")
    return vals[:3], vals[3:]


def cmd_metrics(a, out: Path) -> dict:
    recon = load_volume(a.recon)
    truth = load_volume(a.truth)
    inputs = {**_hash_volume(a.recon), **_hash_volume(a.truth)}
    aligned, ncc = align_to(truth, recon, allow_flip=not a.no_flip)
    # compare shapes, not absolute scale: reconstructions carry the flux of chi
    scale = float(truth.data.sum()) / float(aligned.data.sum()) if aligned.data.sum() > 0 else 1.0
    scaled = aligned.like(aligned.data.astype(np.float64) * scale)
    result = {"ncc": ncc, "mse": mse(truth, scaled), "allow_flip": not a.no_flip, "flux_scale": scale}
    rows, curves = [], {}
    for k, spec in enumerate(a.profile or []):
        p0, p1 = _profile_points(spec)
        for name, v in (("truth", truth), ("recon", scaled)):
            rep = line_profile(v, p0, p1, a.samples)
            curves[f"{name} #{k}"] = (rep.positions, rep.values)
            rows += [(k, name, p, val) for p, val in rep.samples]
            result.setdefault("profiles", []).append(
                {"index": k, "volume": name, "fwhm_um": rep.fwhm, "dip_contrast": rep.dip_contrast}
            )
    if not a.profile:
        # default: axis profiles through the brightest truth voxel
        peak = np.unravel_index(np.argmax(truth.data), truth.dims)
        for axis in "xz":
            for name, v in (("truth", truth), ("recon", scaled)):
                prof = axis_profile(v, AXES[axis], peak)
                pos = np.arange(prof.size) * v.voxel_size[AXES[axis]]
                curves[f"{name} {axis}"] = (pos, prof)
                rows += [(axis, name, p, val) for p, val in zip(pos, prof)]
    _write_csv(out / "profiles.csv", ["profile", "volume", "position_um", "value"], rows)
    plotting.plot_profiles(curves, out / "profiles.png")
    save_volume(scaled, out / "recon_aligned.raw")
    with open(out / "metrics.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"inputs": inputs, "outputs": ["metrics.json", "profiles.csv", "recon_aligned.raw"], "metrics": result}


def cmd_psf(a, out: Path) -> dict:
    dims = (a.dims,) * 3
    angles = a.angles if a.angles is not None else list(DEFAULT_ANGLES)
    m = PsfModel(tuple(a.sigma))
    h0 = rasterize_psf(m, dims)
    hbar = average_direct_psf(m, angles, dims)
    Hbar = average_autocorr_psf(m, angles, dims, PadPolicy(a.pad))
    heff = effective_psf(Hbar, h0, SolverOptions(iterations=a.iters, log_every=0))
    save_volume(hbar, out / "h_bar.raw")
    save_autocorr(Hbar, out / "H_bar.raw")
    save_volume(heff, out / "h_eff.raw")
    rows, curves, summary = [], {}, {}
    c = tuple(n // 2 for n in dims)
    from .metrics import fwhm

    for axis in "xyz":
        ax = AXES[axis]
        for name, v in (("h0", h0), ("h_bar", hbar), ("h_eff", heff)):
            prof = axis_profile(v, ax, c)
            rows += [(axis, name, i, val) for i, val in enumerate(prof)]
            summary[f"fwhm_{name}_{axis}"] = fwhm(prof, method="cubic")
            if axis != "y":
                curves[f"{name} {axis}"] = (np.arange(prof.size) - c[ax], prof)
    _write_csv(out / "psf_profiles.csv", ["axis", "kernel", "index", "value"], rows)
    plotting.plot_profiles(curves, out / "psf_profiles.png", xlabel="offset (voxels)")
    plotting.plot_mips({"h_bar": hbar, "h_eff": heff}, out / "psf_mips.png")
    with open(out / "psf_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"inputs": {}, "outputs": ["h_bar.raw", "H_bar.raw", "h_eff.raw", "psf_profiles.csv"], "summary": summary}


COMMANDS = {
    "simulate": cmd_simulate,
    "fuse": cmd_fuse,
    "baseline": cmd_baseline,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
    "psf": cmd_psf,
}

# options that must end up set, by flag or by --config
REQUIRED = {
    "simulate": ["out"],
    "fuse": ["views", "out"],
    "baseline": ["views", "out"],
    "reconstruct": ["chi", "out"],
    "metrics": ["recon", "truth", "out"],
    "psf": ["out"],
}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    p = _Parser(
        prog="acfusion",
        description="Multi-view fusion in auto-correlation space and its inversion.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    subs = {}

    def add(name, help_):
        s = sub.add_parser(name, help=help_, description=help_, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--out", help="output directory")
        s.add_argument("--config", help="JSON config (or a previous run.json); flags override it")
        s.add_argument("--threads", type=int, help="FFT worker threads; 1 is bit-reproducible")
        s.add_argument("-v", "--verbose", action="store_true")
        subs[name] = s
        return s

    s = add("simulate", "simulate a phantom and its rotated, blurred, shifted views")
    s.add_argument("--phantom", choices=KINDS, default="spheres")
    s.add_argument("--dims", type=int, default=32, help="cube edge length in voxels")
    s.add_argument("--count", type=int, default=None, help="number of objects (kind default)")
    s.add_argument("--angles", type=_floats, default=None, help='e.g. "0,30,...,330"')
    s.add_argument("--sigma", type=_floats, default=[1.0, 1.0, 3.0], help="PSF sigma sx,sy,sz in voxels")
    s.add_argument("--shift-max", type=float, default=2.0)
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sd relative to the view peak")
    s.add_argument("--seed", type=int, default=0)

    for name, help_ in (("fuse", "average view auto-correlations"),
                        ("baseline", "register views to the 0-degree one and average")):
        s = add(name, help_)
        s.add_argument("--views", help="directory with view_*.raw (and manifest.json)")
        s.add_argument("--angles", type=_floats, default=None, help="view angles; overrides the manifest")
        s.add_argument("--dark", default=None, help="background region x0,y0,z0,dx,dy,dz")
        if name == "fuse":
            s.add_argument("--pad", choices=("linear", "circular"), default="linear")
            s.add_argument("--baseline", action="store_true", help="also write the aligned mean")

    s = add("reconstruct", "invert a fused auto-correlation with SS or AU iterations")
    s.add_argument("--chi", help="fused auto-correlation volume")
    s.add_argument("--init", default="auto", help="initial volume, or 'auto' (aligned mean, else view 0)")
    s.add_argument("--method", choices=("ss", "au"), default="ss")
    s.add_argument("--psf-acorr", default=None, help="averaged auto-correlated PSF (AU only)")
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--log-every", type=int, default=1)
    s.add_argument("--epsilon", type=float, default=1e-12)
    s.add_argument("--out-name", default="recon.raw", help="file name of the reconstruction")

    s = add("metrics", "compare a reconstruction with ground truth")
    s.add_argument("--recon")
    s.add_argument("--truth")
    s.add_argument("--no-flip", action="store_true", help="do not try the point reflection")
    s.add_argument("--profile", action="append", help="line x0,y0,z0,x1,y1,z1 in um (repeatable)")
    s.add_argument("--samples", type=int, default=101)

    s = add("psf", "export h_bar, H_bar and the effective PSF with profiles")
    s.add_argument("--dims", type=int, default=32)
    s.add_argument("--angles", type=_floats, default=None)
    s.add_argument("--sigma", type=_floats, default=[1.0, 1.0, 3.0])
    s.add_argument("--pad", choices=("linear", "circular"), default="linear")
    s.add_argument("--iters", type=int, default=5000)
    return p, subs


def _load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if "config" in cfg and isinstance(cfg["config"], dict):
        cfg = cfg["config"]
    return {k.replace("-", "_"): v for k, v in cfg.items() if k not in ("command", "config")}


def _parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    if not argv:
        parser.print_help()
        raise SystemExit(EXIT_USAGE)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("missing subcommand")
    if args.config:
        cfg = _load_config(args.config)
        known = {a.dest for a in subs[args.command]._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        subs[args.command].set_defaults(**cfg)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing --{', --'.join(m.replace('_', '-') for m in missing)}")
    return args


def _config_of(args) -> dict:
    skip = {"config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _write_provenance(out: Path, args, extra: dict, wall: float) -> None:
    record = {
        "command": args.command,
        "config": _config_of(args),
        "versions": {
            "acfusion": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "threads": args.threads,
        "wall_time_s": wall,
        **extra,
    }
    with open(out / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    except UsageError as e:
        print(f"acfusion: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as e:
        print(f"acfusion: error: cannot read config: {e}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("acfusion: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        set_threads(args.threads)
    out = Path(args.out)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, out)
    except UsageError as e:
        print(f"acfusion {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, VolumeFormatError, json.JSONDecodeError, OSError) as e:
        print(f"acfusion {args.command}: input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as e:
        print(f"acfusion {args.command}: solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError, TypeError) as e:
        print(f"acfusion {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except Exception as e:  # pragma: no cover - last resort, still one line
        print(f"acfusion {args.command}: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    _write_provenance(out, args, extra, time.perf_counter() - start)
    return EXIT_OK


def main() -> None:
    raise SystemExit(run())
