"""End-to-end run: input -> prep -> roi -> tac -> flow -> features -> report."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import logging
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, plots, prep, roi, tac
from . import phantom as phmod
from . import flow as flowmod
from .feat import drift as driftmod
from .volgrid import (
    DynamicSeries,
    Label,
    LabelMask,
    NumericDegeneracy,
    VolumeGrid,
    label_name,
    parse_label,
    read_mask,
    read_series,
    write_mask,
    write_volume,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERATE = 0, 2, 3, 4
FAT_DEPOTS = (Label.EAT, Label.PAT, Label.SUB, Label.PAAT, Label.EAT_REMOTE)
STENOSIS_LABELS = (Label.PCAT_PROX, Label.PCAT_DIST)


class PipelineError(Exception):
    exit_code = EXIT_DATA

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigError(PipelineError):
    exit_code = EXIT_CONFIG


class DataError(PipelineError):
    exit_code = EXIT_DATA


class DegeneracyError(PipelineError):
    exit_code = EXIT_DEGENERATE


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    phantom: str | None = None  # preset name or phantom ini path
    noise_sigma: float | None = None  # overrides the phantom value
    seed: int | None = None
    series: str | None = None  # series.csv manifest
    mask: str | None = None
    centerline: str | None = None
    vessel_code: int = Label.LUMEN_LAD
    region: roi.PcatRegionSpec = roi.PcatRegionSpec()
    s_star_mm: float | None = None
    remote_factor: float = 3.0
    register: bool = True
    search: int = 3
    filter: bool = True
    filter_params: prep.FilterParams = prep.FilterParams()
    slic: flowmod.SlicParams = flowmod.SlicParams()
    density_pcat: float = phmod.DENSITY_FAT
    density_myo: float = phmod.DENSITY_MYO
    tac_policy: str = tac.FIXED
    feature_membership: str = tac.PER_SCAN
    plots: bool = True
    out_dir: str = "out"

    def validate(self) -> None:
        if (self.phantom is None) == (self.series is None):
            raise ConfigError("config", "exactly one input source is required: [input] phantom or [input] series")
        if self.series is not None:
            missing = [k for k in ("mask", "centerline") if getattr(self, k) is None]
            if missing:
                raise ConfigError("config", f"series input needs {' and '.join(missing)} (no phantom flag given)")
        for name in ("tac_policy", "feature_membership"):
            if getattr(self, name) not in tac.POLICIES:
                raise ConfigError("config", f"{name} must be one of {tac.POLICIES}")
        if self.search < 0:
            raise ConfigError("config", "search radius must be >= 0")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        inp = {}
        for k in ("phantom", "noise_sigma", "seed", "series", "mask", "centerline"):
            v = getattr(self, k)
            if v is not None:
                inp[k] = str(v)
        inp["vessel"] = label_name(self.vessel_code)
        cp["input"] = inp
        r = self.region
        cp["roi"] = {
            "diameter_factor": repr(r.diameter_factor),
            "length_mm": repr(r.length_mm),
            "membership_reference": str(r.membership_reference),
            "remote_factor": repr(self.remote_factor),
        }
        if self.s_star_mm is not None:
            cp["roi"]["s_star_mm"] = repr(self.s_star_mm)
        f = self.filter_params
        cp["prep"] = {
            "register": str(self.register).lower(),
            "search": str(self.search),
            "filter": str(self.filter).lower(),
            "sigma_spatial": repr(f.sigma_spatial),
            "sigma_time": repr(f.sigma_time),
            "sigma_range": repr(f.sigma_range),
            "spatial_radius": str(f.spatial_radius),
            "time_radius": str(f.time_radius),
        }
        cp["flow"] = {
            "size": str(self.slic.size),
            "compactness": repr(self.slic.compactness),
            "iterations": str(self.slic.iterations),
            "density_pcat": repr(self.density_pcat),
            "density_myo": repr(self.density_myo),
        }
        cp["analysis"] = {"tac_policy": self.tac_policy, "feature_membership": self.feature_membership, "plots": str(self.plots).lower()}
        cp["output"] = {"dir": self.out_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError("config", f"cannot parse config: {e}") from None
        known = {"input", "roi", "prep", "flow", "analysis", "output"}
        unknown = set(cp.sections()) - known
        if unknown:
            raise ConfigError("config", f"unknown section(s) {sorted(unknown)}")
        try:
            g = lambda sec, key, default=None: cp.get(sec, key, fallback=default)  # noqa: E731
            d = cls()
            opt = lambda sec, key, cast: (cast(cp.get(sec, key)) if cp.has_option(sec, key) else None)  # noqa: E731
            region = roi.PcatRegionSpec(
                diameter_factor=float(g("roi", "diameter_factor", repr(d.region.diameter_factor))),
                length_mm=float(g("roi", "length_mm", repr(d.region.length_mm))),
                membership_reference=int(g("roi", "membership_reference", "0")),
            )
            fp = prep.FilterParams(
                sigma_spatial=float(g("prep", "sigma_spatial", repr(d.filter_params.sigma_spatial))),
                sigma_time=float(g("prep", "sigma_time", repr(d.filter_params.sigma_time))),
                sigma_range=float(g("prep", "sigma_range", repr(d.filter_params.sigma_range))),
                spatial_radius=int(g("prep", "spatial_radius", str(d.filter_params.spatial_radius))),
                time_radius=int(g("prep", "time_radius", str(d.filter_params.time_radius))),
            )
            slic = flowmod.SlicParams(
                size=int(g("flow", "size", str(d.slic.size))),
                compactness=float(g("flow", "compactness", repr(d.slic.compactness))),
                iterations=int(g("flow", "iterations", str(d.slic.iterations))),
            )
            cfg = cls(
                phantom=g("input", "phantom"),
                noise_sigma=opt("input", "noise_sigma", float),
                seed=opt("input", "seed", int),
                series=g("input", "series"),
                mask=g("input", "mask"),
                centerline=g("input", "centerline"),
                vessel_code=parse_label(g("input", "vessel", "LUMEN_LAD")),
                region=region,
                s_star_mm=opt("roi", "s_star_mm", float),
                remote_factor=float(g("roi", "remote_factor", "3.0")),
                register=_bool(g("prep", "register", "true")),
                search=int(g("prep", "search", "3")),
                filter=_bool(g("prep", "filter", "true")),
                filter_params=fp,
                slic=slic,
                density_pcat=float(g("flow", "density_pcat", repr(d.density_pcat))),
                density_myo=float(g("flow", "density_myo", repr(d.density_myo))),
                tac_policy=g("analysis", "tac_policy", tac.FIXED),
                feature_membership=g("analysis", "feature_membership", tac.PER_SCAN),
                plots=_bool(g("analysis", "plots", "true")),
                out_dir=g("output", "dir", "out"),
            )
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError("config", str(e)) from None
        cfg.validate()
        return cfg

    def sha256(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def read_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"config file {path} not found")
    return RunConfig.from_ini(path.read_text())


@dataclass
class RunReport:
    peaks: tac.PeakInfo
    enhancement: dict  # label -> EnhancementSummary
    flows: dict  # label -> FlowMap
    volume: tac.VolumeCurve
    drift: driftmod.FeatureDriftTable
    prox_dist: tac.ProxDistComparison | None
    vessel: roi.VesselGeometry
    shifts: prep.ShiftRecord | None
    config_hash: str
    seed: int | None
    version: str = __version__
    files: dict = field(default_factory=dict)  # relative name -> sha256
    notes: list = field(default_factory=list)


@dataclass
class Inputs:
    series: DynamicSeries
    mask: LabelMask
    centerline: roi.Centerline
    seed: int | None
    s_star_mm: float | None


def load_inputs(cfg: RunConfig, workdir: Path) -> Inputs:
    if cfg.phantom is not None:
        if cfg.phantom in phmod.PRESETS:
            spec = phmod.preset(cfg.phantom)
        else:
            p = workdir / cfg.phantom
            if not p.exists():
                raise ConfigError("input", f"phantom {cfg.phantom!r} is neither a preset nor an existing file")
            spec = phmod.read_spec(p)
        if cfg.noise_sigma is not None:
            spec = replace(spec, noise_sigma=cfg.noise_sigma)
        if cfg.seed is not None:
            spec = replace(spec, rng_seed=cfg.seed)
        series, mask, cls, _ = phmod.simulate(spec)
        if cfg.vessel_code not in cls:
            raise DataError("input", f"phantom has no centerline for {label_name(cfg.vessel_code)}")
        s_star = cfg.s_star_mm
        if s_star is None and any(np.any(mask.labels == c) for c in STENOSIS_LABELS):
            s_star = phmod.STENOSIS_SPLIT_MM
        return Inputs(series, mask, cls[cfg.vessel_code], spec.rng_seed, s_star)
    series = read_series(workdir / cfg.series)
    mask = read_mask(workdir / cfg.mask)
    cl = roi.read_centerline(workdir / cfg.centerline)
    return Inputs(series, mask, cl, None, cfg.s_star_mm)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _present(mask: LabelMask, code: int) -> bool:
    return bool(np.any(mask.labels == code))


def _write_enhancement(summaries: dict, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "delta_at_ppcat", "peak_delta", "time_to_peak_s", "offset_minus1", "offset_plus1"])
        for code, e in summaries.items():
            o = e.offset_delta_hu
            w.writerow(
                [label_name(code), repr(e.delta_at_ppcat), repr(e.peak_delta_hu), repr(e.time_to_peak_s), repr(o[-1]) if -1 in o else "", repr(o[1]) if 1 in o else ""]
            )


def _write_shifts(rec: prep.ShiftRecord, times, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan", "time_s", "dx", "dy", "dz", "ncc", "degenerate", "reference"])
        for k, (d, c, g) in enumerate(zip(rec.shifts, rec.ncc, rec.degenerate)):
            w.writerow([k, repr(float(times[k])), *(int(x) for x in d), repr(float(c)), int(g), int(k == rec.reference)])


def _write_prox_dist(c: tac.ProxDistComparison, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "proximal", "distal", "distal_minus_proximal"])
        w.writerow(["peak_delta_hu", repr(c.proximal.peak_delta_hu), repr(c.distal.peak_delta_hu), repr(c.peak_delta_difference)])
        w.writerow(["time_to_peak_s", repr(c.proximal.time_to_peak_s), repr(c.distal.time_to_peak_s), repr(c.time_to_peak_difference)])


def _stage(name):
    """Re-raise module errors tagged with the stage they came from."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is None or isinstance(ev, PipelineError):
                return False
            if isinstance(ev, NumericDegeneracy):
                raise DegeneracyError(name, str(ev)) from ev
            if isinstance(ev, (ValueError, FileNotFoundError, KeyError)):
                raise DataError(name, str(ev)) from ev
            if isinstance(ev, (ZeroDivisionError, FloatingPointError, np.linalg.LinAlgError)):
                raise DegeneracyError(name, str(ev)) from ev
            return False

    return _Ctx()


def analyse(cfg: RunConfig, inp: Inputs, out: Path) -> RunReport:
    """Run every stage and write outputs into the (existing, empty) directory ``out``."""
    s, mask = inp.series, inp.mask
    notes = []
    ref_m = cfg.region.membership_reference
    if not 0 <= ref_m < len(s):
        raise ConfigError("roi", f"membership_reference {ref_m} outside 0..{len(s) - 1}")
    if not _present(mask, Label.AORTA):
        raise DataError("input", "mask has no AORTA voxels (needed for the arterial input)")

    shifts = None
    with _stage("prep"):
        if cfg.register:
            ref = prep.choose_reference(s, mask, Label.AORTA)
            s, shifts = prep.register_translation(s, ref, cfg.search)
            _write_shifts(shifts, s.times_s, out / "shifts.csv")
            if shifts.degenerate.any():
                notes.append(f"registration degenerate at scans {np.flatnonzero(shifts.degenerate).tolist()}")
        if cfg.filter:
            s = prep.stbf(s, cfg.filter_params)

    with _stage("roi"):
        cl = inp.centerline
        vessel = roi.effective_diameter(mask, cl, cfg.vessel_code, cfg.region.length_mm)
        roi.write_geometry_csv(vessel, s.geometry, out / "vessel_geometry.csv")
        disks = roi.axial_disk_mask(cl, vessel, cfg.region, mask)
        pcat = roi.fat_select(s.volume(ref_m), disks, cfg.region.fat_window)
        if not pcat.any().any():
            raise DataError("roi", "no PCAT voxels inside the fat window at the membership reference scan")
        write_mask(disks, out / "pcat_disk")
        write_mask(pcat, out / "pcat")
        remote = None
        if _present(mask, Label.EAT):
            remote, empty = roi.remote_eat(mask, [cl], [vessel], cfg.remote_factor)
            if empty:
                notes.append("remote EAT region is empty")
                remote = None
        split = None
        if inp.s_star_mm is not None:
            split = roi.split_prox_dist(disks, cl, inp.s_star_mm)

    with _stage("tac"):
        window = cfg.region.fat_window
        aorta = tac.compute_tac(s, mask, Label.AORTA)
        pcat_tac = tac.compute_tac(s, disks, Label.PCAT, cfg.tac_policy, window, ref_m)
        tacs = [aorta, pcat_tac]
        if cfg.tac_policy == tac.FIXED:
            tacs.append(tac.compute_tac(s, disks, Label.PCAT, tac.PER_SCAN, window))
        depots = {}
        for code in FAT_DEPOTS:
            src = remote if code == Label.EAT_REMOTE else mask
            if src is not None and _present(src, code):
                depots[code] = tac.compute_tac(s, src, code, tac.FIXED, window, ref_m)
        if _present(mask, Label.MYO):
            depots[Label.MYO] = tac.compute_tac(s, mask, Label.MYO)
        tacs.extend(depots.values())
        tac.write_tac_csv(tacs, out / "tac.csv")
        peaks = tac.find_peaks(aorta, pcat_tac)
        offsets = (1,) if 1 <= peaks.pa_index < len(s) - 1 else ()
        if not offsets:
            notes.append("Pa is at the series edge; Pa-1/Pa+1 offsets omitted")
        summaries = {Label.PCAT: tac.enhancement_summary(pcat_tac, peaks, offsets)}
        for code, t in depots.items():
            summaries[code] = tac.enhancement_summary(t, peaks, offsets)
        _write_enhancement(summaries, out / "enhancement.csv")
        vc = tac.apparent_volume_curve(s, disks, (cfg.region.fat_window, cfg.region.extended_window))
        tac.write_volume_csv(vc, out / "volume_curve.csv")
        pd = None
        if split is not None:
            pd = tac.compare_prox_dist(s, split, split, Label.PCAT_PROX, Label.PCAT_DIST, peaks, cfg.tac_policy, window, ref_m)
            _write_prox_dist(pd, out / "prox_dist.csv")
        else:
            notes.append("no stenosis split configured; proximal/distal chart omitted")

    with _stage("flow"):
        if not np.max(aorta.mean_hu - aorta.mean_hu[0]) > 0:
            raise DegeneracyError("flow", "arterial input has no positive enhancement")
        p1 = s.volume(0)
        flows = {}
        regions = [(Label.MYO, mask, cfg.density_myo)] if _present(mask, Label.MYO) else []
        regions.append((Label.PCAT, pcat, cfg.density_pcat))
        for code, m, rho in regions:
            sv = flowmod.slic_cluster(p1, m, code, cfg.slic)
            flows[code] = flowmod.estimate_flow(s, sv, aorta, flowmod.FlowParams(density=rho))
        flowmod.write_flow_csv(flows.values(), out / "flow_supervoxels.csv")
        flowmod.write_flow_summary(flows.values(), out / "flow_summary.csv")
        agg = np.zeros(s.geometry.shape, np.float32)
        for fm in flows.values():
            agg += fm.volume().values
        write_volume(VolumeGrid(s.geometry, agg), out / "flow_map")

    with _stage("features"):
        fvs = []
        for k in range(len(s)):
            v = s.volume(k)
            m = roi.fat_select(v, disks, cfg.region.fat_window) if cfg.feature_membership == tac.PER_SCAN else pcat
            fvs.append(driftmod.extract(v, m, Label.PCAT, k))
        dt = driftmod.drift_table(fvs, peaks)
        driftmod.write_features_csv(fvs, s.times_s, out / "features.csv")
        driftmod.write_drift_csv(dt, out / "drift.csv")
        driftmod.write_drift_csv(dt, out / "drift_plot.csv", clip=driftmod.PLOT_CLIP)

    report = RunReport(peaks, summaries, flows, vc, dt, pd, vessel, shifts, cfg.sha256(), inp.seed, notes=notes)
    if cfg.plots:
        with _stage("plots"):
            emit_plots(report, s.times_s, tacs, out)
    return report


def emit_plots(report: RunReport, times, tacs, out: Path) -> list[Path]:
    files = []
    curves = [(f"{t.name} ({t.policy})" if t.label == Label.PCAT else t.name, t.mean_hu) for t in tacs]
    files.append(plots.write_svg(plots.tac_chart(times, curves, report.peaks.pa_time), out / "tac.svg"))
    enh = [(t.name, t.delta()) for t in tacs if t.label != Label.AORTA]
    files.append(plots.write_svg(plots.tac_chart(times, enh, report.peaks.pa_time, "Enhancement vs P1"), out / "enhancement.svg"))
    vc = report.volume
    ch = plots.LineChart("Apparent PCAT volume", "time (s)", "% change vs P1")
    for (lo, hi), row in zip(vc.windows, vc.percent_change):
        ch.add(f"[{lo:g}, {hi:g}] HU", vc.times_s, row)
    files.append(plots.write_svg(ch, out / "volume_curve.svg"))
    d = report.drift
    files.append(plots.write_svg(plots.drift_chart(d.scans, d.names, d.percent), out / "drift.svg"))
    if report.prox_dist is not None:
        pd = report.prox_dist
        files.append(
            plots.write_svg(
                plots.tac_chart(times, [("proximal", pd.proximal.delta_hu), ("distal", pd.distal.delta_hu)], report.peaks.pa_time, "Proximal vs distal PCAT"),
                out / "prox_dist.svg",
            )
        )
    return files


def format_report(r: RunReport, times) -> str:
    pk = r.peaks
    lines = [
        "pcatdyn run report",
        f"version: {r.version}",
        f"config_sha256: {r.config_hash}",
        f"seed: {r.seed if r.seed is not None else 'n/a'}",
        "",
        "[landmarks]",
        f"P1: scan {pk.p1_index} t={pk.p1_time!r} s",
        f"Pa: scan {pk.pa_index} t={pk.pa_time!r} s",
        f"Ppcat: scan {pk.ppcat_index} t={pk.ppcat_time!r} s (Pa{pk.ppcat_index - pk.pa_index:+d} scans)",
        "",
        "[vessel]",
        f"median_d_eff_mm: {r.vessel.median_d_eff_mm!r}",
        f"slices: {len(r.vessel.slices)}",
        "",
        "[enhancement]",
    ]
    for code, e in r.enhancement.items():
        o = e.offset_delta_hu
        off = f" Pa-1={o[-1]!r} Pa+1={o[1]!r}" if 1 in o else ""
        lines.append(f"{label_name(code)}: dHU@Ppcat={e.delta_at_ppcat!r} peak={e.peak_delta_hu!r} ttp_s={e.time_to_peak_s!r}{off}")
    lines += ["", "[flow]"]
    for code, fm in r.flows.items():
        lines.append(f"{label_name(code)}: mean={fm.mean!r} median={fm.median!r} n_supervoxels={len(fm.mbf)} clamped={int(fm.clamped.sum())}")
    if Label.MYO in r.flows and Label.PCAT in r.flows and r.flows[Label.MYO].mean > 0:
        lines.append(f"PCAT/MYO ratio: {r.flows[Label.PCAT].mean / r.flows[Label.MYO].mean!r}")
    lines += ["", "[apparent_volume]"]
    for (lo, hi), loss in zip(r.volume.windows, r.volume.peak_loss_percent()):
        lines.append(f"window [{lo!r}, {hi!r}]: peak loss {float(loss)!r} %")
    lines += ["", "[drift]", f"stable_fraction: {r.drift.stable_fraction!r}", f"stable: {', '.join(r.drift.stable_names())}"]
    lines += ["", "[prox_dist]"]
    if r.prox_dist is None:
        lines.append("omitted (no stenosis split)")
    else:
        lines.append(f"peak_delta_difference: {r.prox_dist.peak_delta_difference!r}")
        lines.append(f"time_to_peak_difference_s: {r.prox_dist.time_to_peak_difference!r}")
    if r.shifts is not None:
        lines += ["", "[registration]", f"reference: {r.shifts.reference}", f"shifts: {r.shifts.shifts.tolist()}"]
    lines += ["", "[notes]"] + (r.notes or ["none"])
    lines += ["", "[files]"] + [f"{h}  {name}" for name, h in sorted(r.files.items())]
    return "\n".join(lines) + "\n"


def checksum_files(directory: Path, exclude=("report.txt",)) -> dict[str, str]:
    out = {}
    for p in sorted(directory.rglob("*")):
        rel = p.relative_to(directory).as_posix()
        if p.is_file() and rel not in exclude:
            out[rel] = _sha(p)
    return out


def run_pipeline(cfg: RunConfig, workdir=".") -> RunReport:
    """Execute every stage; outputs appear atomically in ``workdir/out_dir``.

    On failure nothing is left behind: work happens in a sibling temporary
    directory that is removed.
    """
    cfg.validate()
    workdir = Path(workdir)
    final = workdir / cfg.out_dir
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.partial-", dir=final.parent))
    try:
        with _stage("input"):
            inp = load_inputs(cfg, workdir)
        (tmp / "config.ini").write_text(cfg.to_ini())
        report = analyse(cfg, inp, tmp)
        report.files = checksum_files(tmp)
        (tmp / "report.txt").write_text(format_report(report, inp.series.times_s))
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return report
