"""Command line entry point: ``pcatdyn <subcommand> ...``."""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, plots, prep, roi, tac
from . import flow as flowmod
from . import phantom as phmod
from . import pipeline as pl
from .feat import drift as driftmod
from .volgrid import (
    Label,
    LabelMask,
    NumericDegeneracy,
    VolumeGrid,
    label_name,
    parse_label,
    read_mask,
    read_series,
    write_mask,
    write_series,
    write_volume,
)

log = logging.getLogger("pcatdyn")


class UsageError(Exception):
    pass


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("PCATDYN_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"PCATDYN_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _masks(wd: Path, paths) -> list[LabelMask]:
    return [read_mask(wd / p) for p in paths]


def _mask_for(masks: list[LabelMask], code: int) -> LabelMask:
    for m in masks:
        if np.any(m.labels == code):
            return m
    raise ValueError(f"no mask contains label {label_name(code)}")


def _out_dir(wd: Path, p: str) -> Path:
    d = wd / p
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_phantom(a, wd: Path) -> int:
    if (a.preset is None) == (a.spec is None):
        raise UsageError("give exactly one of --preset or --spec")
    if a.preset is not None:
        kw = {"dims": tuple(a.dims)} if a.dims else {}
        spec = phmod.preset(a.preset, **kw)
    else:
        spec = phmod.read_spec(wd / a.spec)
    if a.noise is not None:
        spec = replace(spec, noise_sigma=a.noise)
    if a.seed is not None:
        spec = replace(spec, rng_seed=a.seed)
    series, mask, cls, truth = phmod.simulate(spec)
    files = phmod.write_outputs(wd / a.out, series, mask, cls, truth, spec)
    for k, p in files.items():
        print(f"{k}: {p}")
    return 0


def _filter_params(a, wd: Path) -> prep.FilterParams:
    vals = {
        "sigma_spatial": a.sigma_spatial,
        "sigma_time": a.sigma_time,
        "sigma_range": a.sigma_range,
        "spatial_radius": a.spatial_radius,
        "time_radius": a.time_radius,
    }
    if a.filter:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string((wd / a.filter).read_text())
        if not cp.has_section("filter"):
            raise UsageError(f"{a.filter}: expected a [filter] section")
        for k, v in cp["filter"].items():
            if k not in vals:
                raise UsageError(f"{a.filter}: unknown filter key {k!r}")
            vals[k] = float(v) if isinstance(vals[k], float) else int(v)
    return prep.FilterParams(**vals)


def cmd_prep(a, wd: Path) -> int:
    s = read_series(wd / a.series)
    out = _out_dir(wd, a.out)
    if not a.no_register:
        ref = None if a.ref_scan == "auto" else int(a.ref_scan)
        if ref is None:
            aorta = read_mask(wd / a.mask) if a.mask else None
            ref = prep.choose_reference(s, aorta, Label.AORTA if aorta is not None and aorta.count(Label.AORTA) else None)
        s, rec = prep.register_translation(s, ref, a.search)
        pl._write_shifts(rec, s.times_s, out / "shifts.csv")
        print(f"reference scan {ref}; shifts {rec.shifts.tolist()}")
    if not a.no_filter:
        s = prep.stbf(s, _filter_params(a, wd))
    print(write_series(s, out / "series"))
    return 0


def cmd_roi(a, wd: Path) -> int:
    mask = read_mask(wd / a.mask)
    cl = roi.read_centerline(wd / a.centerline)
    if a.resample:
        cl = cl.resample(min(mask.geometry.spacing))
    spec = roi.PcatRegionSpec(diameter_factor=a.diameter_factor, length_mm=a.length, membership_reference=a.reference)
    out = _out_dir(wd, a.out)
    vessel = roi.effective_diameter(mask, cl, parse_label(a.vessel), spec.length_mm)
    roi.write_geometry_csv(vessel, mask.geometry, out / "vessel_geometry.csv")
    disks = roi.axial_disk_mask(cl, vessel, spec, mask)
    write_mask(disks, out / "pcat_disk")
    print(f"median effective diameter {vessel.median_d_eff_mm:.4f} mm; disk voxels {disks.count(Label.PCAT)}")
    if a.series:
        s = read_series(wd / a.series)
        pcat = roi.fat_select(s.volume(spec.membership_reference), disks, spec.fat_window)
        write_mask(pcat, out / "pcat")
        print(f"PCAT voxels in fat window at scan {spec.membership_reference}: {pcat.count(Label.PCAT)}")
    if a.rings:
        rings = [tuple(float(x) for x in r.split(":")) for r in a.rings]
        write_mask(roi.annular_partition(cl, vessel, roi.RegionPartition(tuple(rings)), mask, spec.length_mm), out / "rings")
    if a.s_star is not None:
        write_mask(roi.split_prox_dist(disks, cl, a.s_star), out / "pcat_prox_dist")
    if mask.count(Label.EAT):
        remote, empty = roi.remote_eat(mask, [cl], [vessel], a.remote_factor)
        write_mask(remote, out / "eat_remote")
        if empty:
            print("warning: remote EAT is empty", file=sys.stderr)
    return 0


def _window(w):
    return None if w is None else (float(w[0]), float(w[1]))


def cmd_tac(a, wd: Path) -> int:
    s = read_series(wd / a.series)
    masks = _masks(wd, a.mask)
    window = _window(a.window)
    tacs = []
    for c in a.codes:
        code = parse_label(c)
        m = _mask_for(masks, code)
        fat = code in (Label.PCAT, *pl.FAT_DEPOTS)
        tacs.append(tac.compute_tac(s, m, code, a.policy, window if fat else None, a.reference))
    out = wd / a.out
    out.parent.mkdir(parents=True, exist_ok=True)
    tac.write_tac_csv(tacs, out)
    by = {t.label: t for t in tacs}
    pa_time = None
    if Label.AORTA in by and Label.PCAT in by:
        pk = tac.find_peaks(by[Label.AORTA], by[Label.PCAT])
        pa_time = pk.pa_time
        print(f"P1 scan {pk.p1_index}; Pa scan {pk.pa_index}; Ppcat scan {pk.ppcat_index}")
    if a.svg:
        plots.write_svg(plots.tac_chart(s.times_s, [(t.name, t.mean_hu) for t in tacs], pa_time), wd / a.svg)
    print(out)
    return 0


def cmd_volume(a, wd: Path) -> int:
    s = read_series(wd / a.series)
    disks = read_mask(wd / a.disks)
    windows = [tuple(map(float, w)) for w in a.window] if a.window else [roi.FAT_WINDOW, roi.EXTENDED_FAT_WINDOW]
    vc = tac.apparent_volume_curve(s, disks, windows)
    out = wd / a.out
    out.parent.mkdir(parents=True, exist_ok=True)
    tac.write_volume_csv(vc, out)
    for (lo, hi), loss in zip(vc.windows, vc.peak_loss_percent()):
        print(f"[{lo:g}, {hi:g}] peak loss {loss:.3f} %")
    if a.svg:
        ch = plots.LineChart("Apparent PCAT volume", "time (s)", "% change vs P1")
        for (lo, hi), row in zip(vc.windows, vc.percent_change):
            ch.add(f"[{lo:g}, {hi:g}] HU", vc.times_s, row)
        plots.write_svg(ch, wd / a.svg)
    return 0


def cmd_flow(a, wd: Path) -> int:
    s = read_series(wd / a.series)
    masks = _masks(wd, a.mask)
    aif_code = parse_label(a.aif_code)
    aif = tac.compute_tac(s, _mask_for(masks, aif_code), aif_code)
    dens = {}
    for item in a.density or []:
        k, _, v = item.partition("=")
        dens[parse_label(k)] = float(v)
    sp = flowmod.SlicParams(a.size, a.compactness, a.iterations)
    p1 = s.volume(0)
    maps = []
    for c in a.codes:
        code = parse_label(c)
        rho = dens.get(code, phmod.DENSITY_MYO if code == Label.MYO else phmod.DENSITY_FAT)
        sv = flowmod.slic_cluster(p1, _mask_for(masks, code), code, sp)
        maps.append(flowmod.estimate_flow(s, sv, aif, flowmod.FlowParams(density=rho, aif_code=aif_code)))
    out = _out_dir(wd, a.out)
    flowmod.write_flow_csv(maps, out / "flow_supervoxels.csv")
    flowmod.write_flow_summary(maps, out / "flow_summary.csv")
    agg = np.zeros(s.geometry.shape, np.float32)
    for fm in maps:
        agg += fm.volume().values
        print(f"{label_name(fm.region_code)}: mean {fm.mean:.3f} median {fm.median:.3f} mL/100g/min ({len(fm.mbf)} supervoxels)")
    write_volume(VolumeGrid(s.geometry, agg), out / "flow_map")
    return 0


def cmd_features(a, wd: Path) -> int:
    s = read_series(wd / a.series)
    masks = _masks(wd, a.mask)
    disks = read_mask(wd / a.disks)
    window = roi.FAT_WINDOW
    aorta = tac.compute_tac(s, _mask_for(masks, Label.AORTA), Label.AORTA)
    pcat_tac = tac.compute_tac(s, disks, Label.PCAT, tac.FIXED, window, a.reference)
    pk = tac.find_peaks(aorta, pcat_tac)
    fixed = roi.fat_select(s.volume(a.reference), disks, window)
    fvs = []
    for k in range(len(s)):
        v = s.volume(k)
        m = roi.fat_select(v, disks, window) if a.membership == tac.PER_SCAN else fixed
        fvs.append(driftmod.extract(v, m, Label.PCAT, k))
    dt = driftmod.drift_table(fvs, pk)
    out = _out_dir(wd, a.out)
    driftmod.write_features_csv(fvs, s.times_s, out / "features.csv")
    driftmod.write_drift_csv(dt, out / "drift.csv")
    driftmod.write_drift_csv(dt, out / "drift_plot.csv", clip=driftmod.PLOT_CLIP)
    if a.svg:
        plots.write_svg(plots.drift_chart(dt.scans, dt.names, dt.percent), out / "drift.svg")
    print(f"stable fraction {dt.stable_fraction:.3f}: {', '.join(dt.stable_names())}")
    return 0


def cmd_report(a, wd: Path) -> int:
    d = wd / a.dir
    rep = d / "report.txt"
    if not rep.exists():
        raise FileNotFoundError(f"no report.txt in {d}")
    text = rep.read_text()
    listed = {}
    section = None
    for line in text.splitlines():
        if line.startswith("["):
            section = line
        elif section == "[files]" and line.strip():
            h, name = line.split(None, 1)
            listed[name] = h
    bad = [n for n, h in listed.items() if not (d / n).exists() or hashlib.sha256((d / n).read_bytes()).hexdigest() != h]
    sys.stdout.write(text)
    if bad:
        print(f"checksum mismatch: {', '.join(bad)}", file=sys.stderr)
        return pl.EXIT_DATA
    print(f"verified {len(listed)} file checksums")
    return 0


def cmd_run(a, wd: Path) -> int:
    cfg = pl.read_config(wd / a.config)
    if a.out:
        cfg = replace(cfg, out_dir=a.out)
    report = pl.run_pipeline(cfg, wd)
    print(f"wrote {len(report.files) + 1} files to {wd / cfg.out_dir}")
    return 0


# ---------------------------------------------------------------------------


def _add_filter_args(p):
    d = prep.FilterParams()
    p.add_argument("--sigma-spatial", type=float, default=d.sigma_spatial, help="mm")
    p.add_argument("--sigma-time", type=float, default=d.sigma_time, help="s")
    p.add_argument("--sigma-range", type=float, default=d.sigma_range, help="HU")
    p.add_argument("--spatial-radius", type=int, default=d.spatial_radius)
    p.add_argument("--time-radius", type=int, default=d.time_radius)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcatdyn", description="Dynamic pericoronary adipose tissue analysis")
    ap.add_argument("--version", action="version", version=f"pcatdyn {__version__}")
    ap.add_argument("--workdir", default=".", help="base directory for all relative paths")
    ap.add_argument("--threads", type=int, default=None, help="worker cap (falls back to PCATDYN_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic series with ground truth")
    p.add_argument("--preset", choices=sorted(phmod.PRESETS))
    p.add_argument("--spec", help="phantom INI file")
    p.add_argument("--dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="phantom")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("prep", help="register and filter a series")
    p.add_argument("--series", required=True, help="series.csv manifest")
    p.add_argument("--mask", help="label mask with AORTA (reference scan choice)")
    p.add_argument("--ref-scan", default="auto", help="'auto' (aorta peak) or a scan index")
    p.add_argument("--search", type=int, default=3)
    p.add_argument("--filter", help="INI file with a [filter] section of FilterParams keys")
    p.add_argument("--no-register", action="store_true")
    p.add_argument("--no-filter", action="store_true")
    _add_filter_args(p)
    p.add_argument("--out", default="prep")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("roi", help="PCAT disks, fat gating and partitions")
    p.add_argument("--mask", required=True)
    p.add_argument("--centerline", required=True)
    p.add_argument("--series", help="series manifest for fat-window gating")
    p.add_argument("--vessel", default="LUMEN_LAD")
    p.add_argument("--diameter-factor", type=float, default=2.0)
    p.add_argument("--length", type=float, default=40.0)
    p.add_argument("--reference", type=int, default=0)
    p.add_argument("--rings", nargs="+", metavar="IN:OUT")
    p.add_argument("--s-star", type=float)
    p.add_argument("--remote-factor", type=float, default=3.0)
    p.add_argument("--resample", action="store_true", help="resample the centerline to the finest voxel spacing")
    p.add_argument("--out", default="roi")
    p.set_defaults(func=cmd_roi)

    p = sub.add_parser("tac", help="time-attenuation curves")
    p.add_argument("--series", required=True)
    p.add_argument("--mask", required=True, action="append")
    p.add_argument("--codes", nargs="+", default=["AORTA", "PCAT"])
    p.add_argument("--policy", choices=tac.POLICIES, default=tac.FIXED)
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--reference", type=int, default=0)
    p.add_argument("--out", default="tac.csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_tac)

    p = sub.add_parser("volume-curve", help="apparent PCAT volume per scan")
    p.add_argument("--series", required=True)
    p.add_argument("--disks", required=True)
    p.add_argument("--window", type=float, nargs=2, action="append", metavar=("LO", "HI"))
    p.add_argument("--out", default="volume_curve.csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_volume)

    p = sub.add_parser("flow", help="supervoxel maximum-slope flow")
    p.add_argument("--series", required=True)
    p.add_argument("--mask", required=True, action="append")
    p.add_argument("--codes", nargs="+", default=["MYO", "PCAT"])
    p.add_argument("--aif-code", default="AORTA")
    p.add_argument("--density", action="append", metavar="LABEL=G_PER_ML")
    d = flowmod.SlicParams()
    p.add_argument("--size", type=int, default=d.size)
    p.add_argument("--compactness", type=float, default=d.compactness)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--out", default="flow")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("features", help="per-scan features and drift table")
    p.add_argument("--series", required=True)
    p.add_argument("--mask", required=True, action="append", help="anatomy mask with AORTA")
    p.add_argument("--disks", required=True, help="PCAT disk mask")
    p.add_argument("--membership", choices=tac.POLICIES, default=tac.PER_SCAN)
    p.add_argument("--reference", type=int, default=0)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", default="features")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("report", help="print a run report and verify its checksums")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override [output] dir")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    wd = Path(a.workdir)
    try:
        if not wd.is_dir():
            raise UsageError(f"workdir {wd} does not exist")
        _set_threads(a.threads)
        return a.func(a, wd)
    except (UsageError, pl.ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return pl.EXIT_CONFIG
    except pl.PipelineError as e:
        kind = "numeric degeneracy" if e.exit_code == pl.EXIT_DEGENERATE else "data error"
        print(f"{kind}: {e}", file=sys.stderr)
        return e.exit_code
    except NumericDegeneracy as e:
        print(f"numeric degeneracy: {e}", file=sys.stderr)
        return pl.EXIT_DEGENERATE
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return pl.EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
