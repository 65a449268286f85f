"""Volumetric data types and raw+sidecar file I/O.

Arrays are held in C order with shape ``(nz, ny, nx)`` so that x varies
fastest in memory, which is also the on-disk payload order.  Physical
coordinates of voxel ``(i, j, k)`` (x, y, z indices) are
``origin + (i, j, k) * spacing``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER_SUFFIX = ".volhdr"
PAYLOAD_SUFFIX = ".volraw"
FORMAT_TAG = "pcatdyn-volume"
FORMAT_VERSION = 1


class Label(enum.IntEnum):
    """Voxel label codes stored in a :class:`LabelMask`."""

    BG = 0
    MYO = 1
    AORTA = 2
    LUMEN_LAD = 3
    LUMEN_RCA = 4
    SUB = 5
    PAT = 6
    EAT = 7
    PAAT = 8
    PCAT = 9
    PCAT_PROX = 10
    PCAT_DIST = 11
    EAT_REMOTE = 12


# Ring labels produced by annular partitioning: RING_BASE + ring index.
RING_BASE = 100
MAX_RINGS = 16

VALID_CODES = frozenset(int(c) for c in Label) | frozenset(
    range(RING_BASE, RING_BASE + MAX_RINGS)
)


def ring_code(index: int) -> int:
    if not 0 <= index < MAX_RINGS:
        raise ValueError(f"ring index {index} outside 0..{MAX_RINGS - 1}")
    return RING_BASE + index


def label_name(code: int) -> str:
    if code >= RING_BASE:
        return f"RING_{code - RING_BASE}"
    return Label(code).name


def parse_label(text: str | int) -> int:
    """Accept a label name (``"PCAT"``, ``"ring_1"``) or an integer code."""
    if isinstance(text, (int, np.integer)):
        code = int(text)
    else:
        s = str(text).strip()
        if s.lstrip("-").isdigit():
            code = int(s)
        elif s.upper().startswith("RING_"):
            code = ring_code(int(s[5:]))
        else:
            try:
                code = int(Label[s.upper()])
            except KeyError:
                raise ValueError(f"unknown label {text!r}") from None
    if code not in VALID_CODES:
        raise ValueError(f"label code {code} is not in the enumerated set")
    return code


def _triple(values, name: str, cast=float) -> tuple:
    t = tuple(cast(v) for v in values)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Geometry:
    """Grid geometry shared by volumes and masks."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, "dims", int))
        object.__setattr__(self, "spacing", _triple(self.spacing, "spacing"))
        object.__setattr__(self, "origin", _triple(self.origin, "origin"))
        if min(self.dims) < 1:
            raise ValueError(f"dims must all be >= 1, got {self.dims}")
        if not all(s > 0 and math.isfinite(s) for s in self.spacing):
            raise ValueError(f"spacing must all be > 0, got {self.spacing}")
        if not all(math.isfinite(o) for o in self.origin):
            raise ValueError("origin must be finite")

    def __eq__(self, other):
        if not isinstance(other, Geometry):
            return NotImplemented
        return (self.dims, self.spacing, self.origin) == (
            other.dims,
            other.spacing,
            other.origin,
        )

    def __hash__(self):
        return hash((self.dims, self.spacing, self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def axis_coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical x, y, z coordinates of voxel centres along each axis."""
        return tuple(
            o + s * np.arange(n, dtype=np.float64)
            for o, s, n in zip(self.origin, self.spacing, self.dims)
        )

    def physical_coords(self, zyx_index: np.ndarray) -> np.ndarray:
        """Map ``(N, 3)`` array indices in (z, y, x) order to (x, y, z) mm."""
        idx = np.asarray(zyx_index, dtype=np.float64)[:, ::-1]
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def extent_mm(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper physical bounds of the grid's voxel boxes."""
        o = np.asarray(self.origin)
        s = np.asarray(self.spacing)
        n = np.asarray(self.dims)
        return o - s / 2, o + (n - 0.5) * s


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """A 3D grid of HU values.

    ``values`` is coerced to float32 with shape ``(nz, ny, nx)``; a flat
    array of length ``nx*ny*nz`` in x-fastest order is also accepted.
    """

    geometry: Geometry
    values: np.ndarray
    time_s: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32, order="C")
        if v.size != int(np.prod(self.geometry.dims)):
            raise ValueError(
                f"values has {v.size} elements, dims {self.geometry.dims} "
                f"require {int(np.prod(self.geometry.dims))}"
            )
        v = v.reshape(self.geometry.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", _frozen(v))
        if self.time_s is not None:
            object.__setattr__(self, "time_s", float(self.time_s))

    @classmethod
    def from_array(cls, values, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), time_s=None):
        """Build from a ``(nz, ny, nx)`` array."""
        values = np.asarray(values)
        if values.ndim != 3:
            raise ValueError("expected a 3D (nz, ny, nx) array")
        nz, ny, nx = values.shape
        return cls(Geometry((nx, ny, nz), spacing, origin), values, time_s)

    @property
    def dims(self):
        return self.geometry.dims

    @property
    def spacing(self):
        return self.geometry.spacing

    @property
    def origin(self):
        return self.geometry.origin

    def with_values(self, values, time_s=...) -> "VolumeGrid":
        return VolumeGrid(self.geometry, values, self.time_s if time_s is ... else time_s)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """One 8-bit label code per voxel."""

    geometry: Geometry
    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.size != int(np.prod(self.geometry.dims)):
            raise ValueError(
                f"labels has {raw.size} elements, dims {self.geometry.dims} "
                f"require {int(np.prod(self.geometry.dims))}"
            )
        if raw.dtype.kind == "b":
            raw = raw.astype(np.uint8)
        if raw.size and (raw.min() < 0 or raw.max() > 255):
            raise ValueError("label codes must fit in 8 bits")
        lab = np.array(raw, dtype=np.uint8, order="C").reshape(self.geometry.shape)
        bad = set(np.unique(lab).tolist()) - VALID_CODES
        if bad:
            raise ValueError(f"label codes {sorted(bad)} are not in the enumerated set")
        object.__setattr__(self, "labels", _frozen(lab))

    @classmethod
    def empty(cls, geometry: Geometry) -> "LabelMask":
        return cls(geometry, np.zeros(geometry.shape, np.uint8))

    @classmethod
    def from_bool(cls, geometry: Geometry, mask: np.ndarray, code: int) -> "LabelMask":
        lab = np.zeros(geometry.shape, np.uint8)
        lab[np.asarray(mask, bool).reshape(geometry.shape)] = code
        return cls(geometry, lab)

    @property
    def dims(self):
        return self.geometry.dims

    @property
    def spacing(self):
        return self.geometry.spacing

    @property
    def origin(self):
        return self.geometry.origin

    def select(self, code: int) -> np.ndarray:
        return self.labels == code

    def any(self) -> np.ndarray:
        return self.labels != 0

    def codes(self) -> list[int]:
        return [int(c) for c in np.unique(self.labels) if c != 0]

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.labels == code))

    def merged(self, other: "LabelMask") -> "LabelMask":
        """Overlay ``other``'s nonzero labels onto this mask."""
        check_geometry(self.geometry, other.geometry)
        lab = self.labels.copy()
        nz = other.labels != 0
        lab[nz] = other.labels[nz]
        return LabelMask(self.geometry, lab)


@dataclass(frozen=True, eq=False)
class DynamicSeries:
    """Time-ordered stack of volumes sharing one geometry.

    Stored as a single ``(nt, nz, ny, nx)`` float32 array.
    """

    geometry: Geometry
    data: np.ndarray
    times_s: np.ndarray

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float32, order="C")
        t = np.array(self.times_s, dtype=np.float64).reshape(-1)
        if d.ndim != 4 or d.shape[1:] != self.geometry.shape:
            raise ValueError(
                f"data shape {d.shape} does not match (nt,) + {self.geometry.shape}"
            )
        if d.shape[0] != t.size:
            raise ValueError(f"{d.shape[0]} volumes but {t.size} times")
        if t.size == 0:
            raise ValueError("series must contain at least one volume")
        if not np.all(np.isfinite(t)):
            raise ValueError("times must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("non-increasing times")
        if not np.all(np.isfinite(d)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "data", _frozen(d))
        object.__setattr__(self, "times_s", _frozen(t))

    @classmethod
    def from_volumes(cls, volumes: Sequence[VolumeGrid], times_s: Iterable[float] | None = None):
        volumes = list(volumes)
        if not volumes:
            raise ValueError("series must contain at least one volume")
        geom = volumes[0].geometry
        for k, v in enumerate(volumes[1:], start=1):
            if v.geometry != geom:
                raise ValueError(f"geometry mismatch between volume 0 and volume {k}")
        if times_s is None:
            if any(v.time_s is None for v in volumes):
                raise ValueError("times not given and not all volumes carry time_s")
            times_s = [v.time_s for v in volumes]
        return cls(geom, np.stack([v.values for v in volumes]), np.asarray(list(times_s)))

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, k: int) -> VolumeGrid:
        return self.volume(k)

    def volume(self, k: int) -> VolumeGrid:
        return VolumeGrid(self.geometry, self.data[k], float(self.times_s[k]))

    @property
    def volumes(self) -> list[VolumeGrid]:
        return [self.volume(k) for k in range(len(self))]

    @property
    def spacing(self):
        return self.geometry.spacing

    def with_data(self, data: np.ndarray) -> "DynamicSeries":
        return DynamicSeries(self.geometry, data, self.times_s)


class NumericDegeneracy(ValueError):
    """Input is well formed but numerically degenerate (e.g. a flat arterial input)."""


def check_geometry(a: Geometry, b: Geometry) -> None:
    if a != b:
        raise ValueError(f"geometry mismatch: {a.dims}/{a.spacing}/{a.origin} vs {b.dims}/{b.spacing}/{b.origin}")


def mask_stats(v: VolumeGrid, m: LabelMask, code: int) -> tuple[float, float, int]:
    """Mean, population standard deviation and count of voxels labelled ``code``."""
    check_geometry(v.geometry, m.geometry)
    sel = v.values[m.labels == code].astype(np.float64)
    if sel.size == 0:
        raise ValueError(f"empty region: no voxels with label {code}")
    mean = float(np.mean(sel))
    std = float(np.sqrt(np.mean((sel - mean) ** 2)))
    return mean, std, int(sel.size)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _stem(path) -> Path:
    p = Path(path)
    if p.suffix in (HEADER_SUFFIX, PAYLOAD_SUFFIX):
        p = p.with_suffix("")
    return p


def header_path(path) -> Path:
    return _stem(path).with_name(_stem(path).name + HEADER_SUFFIX)


def payload_path(path) -> Path:
    return _stem(path).with_name(_stem(path).name + PAYLOAD_SUFFIX)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_header(path: Path, geometry: Geometry, dtype: str, units: str, time_s) -> None:
    lines = [
        f"format={FORMAT_TAG}",
        f"version={FORMAT_VERSION}",
        f"dims={' '.join(str(n) for n in geometry.dims)}",
        f"spacing={' '.join(_fmt(s) for s in geometry.spacing)}",
        f"origin={' '.join(_fmt(o) for o in geometry.origin)}",
        f"time_s={'none' if time_s is None else _fmt(time_s)}",
        f"value_units={units}",
        f"dtype={dtype}",
        "byteorder=little",
        "layout=x-fastest",
    ]
    path.write_text("\n".join(lines) + "\n")


def _read_header(path: Path) -> dict[str, str]:
    if not path.exists():
        raise FileNotFoundError(f"missing header file {path}")
    out = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed header line {raw!r}")
        out[key.strip()] = val.strip()
    if out.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} header")
    return out


def _geometry_from_header(h: dict[str, str]) -> Geometry:
    return Geometry(
        [int(x) for x in h["dims"].split()],
        [float(x) for x in h["spacing"].split()],
        [float(x) for x in h["origin"].split()],
    )


def write_volume(v: VolumeGrid, path) -> Path:
    """Write ``<name>.volhdr`` + ``<name>.volraw``; returns the header path."""
    hdr, raw = header_path(path), payload_path(path)
    if not hdr.parent.is_dir():
        raise FileNotFoundError(f"parent directory {hdr.parent} does not exist")
    _write_header(hdr, v.geometry, "float32", "HU", v.time_s)
    raw.write_bytes(v.values.astype("<f4", copy=False).tobytes(order="C"))
    return hdr


def read_volume(path) -> VolumeGrid:
    hdr = _read_header(header_path(path))
    if hdr.get("dtype") != "float32":
        raise ValueError(f"{path}: expected float32 payload, got {hdr.get('dtype')}")
    geom = _geometry_from_header(hdr)
    raw = payload_path(path)
    if not raw.exists():
        raise FileNotFoundError(f"missing payload file {raw}")
    data = np.frombuffer(raw.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(geom.dims)):
        raise ValueError(f"{raw}: payload has {data.size} values, expected {int(np.prod(geom.dims))}")
    t = hdr.get("time_s", "none")
    return VolumeGrid(geom, data.astype(np.float32), None if t == "none" else float(t))


def write_mask(m: LabelMask, path) -> Path:
    hdr, raw = header_path(path), payload_path(path)
    if not hdr.parent.is_dir():
        raise FileNotFoundError(f"parent directory {hdr.parent} does not exist")
    _write_header(hdr, m.geometry, "uint8", "label", None)
    raw.write_bytes(m.labels.tobytes(order="C"))
    return hdr


def read_mask(path) -> LabelMask:
    hdr = _read_header(header_path(path))
    if hdr.get("dtype") != "uint8":
        raise ValueError(f"{path}: expected uint8 label payload, got {hdr.get('dtype')}")
    geom = _geometry_from_header(hdr)
    raw = payload_path(path)
    if not raw.exists():
        raise FileNotFoundError(f"missing payload file {raw}")
    data = np.frombuffer(raw.read_bytes(), dtype=np.uint8)
    if data.size != int(np.prod(geom.dims)):
        raise ValueError(f"{raw}: payload has {data.size} labels, expected {int(np.prod(geom.dims))}")
    return LabelMask(geom, data)


def write_series(s: DynamicSeries, directory, prefix: str = "scan") -> Path:
    """Write every volume plus ``series.csv`` (columns ``path,time_s``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(len(s)):
        name = f"{prefix}_{k:03d}"
        write_volume(s.volume(k), directory / name)
        rows.append((name + HEADER_SUFFIX, _fmt(s.times_s[k])))
    manifest = directory / "series.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "time_s"])
        w.writerows(rows)
    return manifest


def read_manifest(manifest) -> list[tuple[Path, float]]:
    manifest = Path(manifest)
    if not manifest.exists():
        raise FileNotFoundError(f"missing manifest {manifest}")
    with manifest.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["path", "time_s"]:
        raise ValueError(f"{manifest}: expected header 'path,time_s'")
    out = []
    for r in rows[1:]:
        if len(r) != 2:
            raise ValueError(f"{manifest}: malformed row {r}")
        p = Path(r[0].strip())
        if not p.is_absolute():
            p = manifest.parent / p
        out.append((p, float(r[1])))
    return out


def read_series(manifest) -> DynamicSeries:
    entries = read_manifest(manifest)
    if not entries:
        raise ValueError(f"{manifest}: manifest lists no volumes")
    times = [t for _, t in entries]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("non-increasing times")
    volumes = [read_volume(p) for p, _ in entries]
    return DynamicSeries.from_volumes(volumes, times)
