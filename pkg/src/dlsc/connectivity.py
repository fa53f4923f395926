"""Seed-based connectivity: Pearson r, Fisher z, group averaging, emphasis profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .core import (
    DlscError,
    ParseError,
    SignalMatrix,
    ValidationError,
    atomic_write_text,
    check_indices,
    format_float,
)

R_MAX = 1.0 - 1e-15


class UndefinedCorrelation(DlscError, ValueError):
    category = "undefined"


@dataclass(frozen=True)
class RegionSpec:
    name: str
    voxel_indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.voxel_indices)
        if not idx:
            raise ValidationError(f"region {self.name!r} has no voxels")
        if len(set(idx)) != len(idx) or min(idx) < 0:
            raise ValidationError(f"region {self.name!r}: indices must be unique and >= 0")
        object.__setattr__(self, "voxel_indices", idx)


@dataclass(frozen=True)
class ConnectivityRow:
    seed: str
    target: str
    r: float
    z: float
    error: str | None = None

    @property
    def key(self):
        return (self.seed, self.target)

    @property
    def valid(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ConnectivityReport:
    rows: tuple
    n_subjects: int | None = None
    aggregation: str | None = None

    def as_dict(self) -> dict:
        return {row.key: row for row in self.rows}

    def to_csv(self) -> str:
        header = "seed,target,r,z" + (",n_subjects" if self.n_subjects is not None else "")
        lines = [header]
        for row in self.rows:
            r = format_float(row.r) if row.valid else "nan"
            z = format_float(row.z) if row.valid else "nan"
            line = f"{row.seed},{row.target},{r},{z}"
            if self.n_subjects is not None:
                line += f",{self.n_subjects}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def region_series(signals: SignalMatrix, region: RegionSpec) -> np.ndarray:
    idx = check_indices(region.voxel_indices, signals.n_voxels, f"region {region.name!r}")
    return signals.data[:, idx].mean(axis=1)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("pearson needs two equal-length vectors of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = math.sqrt(float(xc @ xc))
    ny = math.sqrt(float(yc @ yc))
    if nx == 0.0 or ny == 0.0:
        raise UndefinedCorrelation("correlation undefined for a zero-variance series")
    return max(-1.0, min(1.0, float(xc @ yc) / (nx * ny)))


def fisher_z(r):
    """atanh with ``|r|`` clamped to ``1 - 1e-15`` so that r = +-1 stays finite."""
    return np.arctanh(np.clip(r, -R_MAX, R_MAX))


def fisher_z_inv(z):
    return np.tanh(z)


def _row(seed, target, a, b):
    try:
        r = pearson(a, b)
    except UndefinedCorrelation as exc:
        return ConnectivityRow(seed, target, math.nan, math.nan, str(exc))
    return ConnectivityRow(seed, target, r, float(fisher_z(r)))


def connectivity_map(signals: SignalMatrix, seeds, targets) -> ConnectivityReport:
    """One row per (seed, target) pair, seeds outermost.

    Zero-variance region series yield rows carrying an ``error`` and NaN
    values; those rows are skipped by :func:`group_average`.
    """
    for region in list(seeds) + list(targets):
        check_indices(region.voxel_indices, signals.n_voxels, f"region {region.name!r}")
    names = [s.name for s in seeds]
    if len(set(names)) != len(names) or len({t.name for t in targets}) != len(targets):
        raise ValidationError("region names must be unique within seeds and within targets")
    series = {}
    for region in list(seeds) + list(targets):
        series[region.name] = region_series(signals, region)
    rows = tuple(
        _row(s.name, t.name, series[s.name], series[t.name]) for s in seeds for t in targets
    )
    return ConnectivityReport(rows)


def group_average(reports) -> ConnectivityReport:
    """Fisher-z mean per pair across reports, mapped back with tanh."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to average")
    keys = [row.key for row in reports[0].rows]
    for rep in reports[1:]:
        if len(rep.rows) != len(keys) or {row.key for row in rep.rows} != set(keys):
            raise ValidationError("reports do not share the same (seed, target) rows")
    lookups = [rep.as_dict() for rep in reports]
    rows = []
    for key in keys:
        zs = [lk[key].z for lk in lookups if lk[key].valid]
        if not zs:
            rows.append(ConnectivityRow(*key, math.nan, math.nan, "no valid subject rows"))
            continue
        z = float(np.mean(zs))
        rows.append(ConnectivityRow(*key, float(fisher_z_inv(z)), z))
    return ConnectivityReport(tuple(rows), len(reports), "fisher-mean")


@dataclass(frozen=True)
class EmphasisRow:
    pair: tuple
    z_raw: float
    z_denoised: float
    delta_z: float


def emphasis_profile(raw: ConnectivityReport, denoised: ConnectivityReport) -> list:
    """Per-pair change in Fisher z, ordered by raw z (strongest first)."""
    a = raw.as_dict()
    b = denoised.as_dict()
    if set(a) != set(b):
        raise ValidationError("raw and denoised reports have different (seed, target) rows")
    out = [
        EmphasisRow(key, a[key].z, b[key].z, b[key].z - a[key].z)
        for key in a
        if a[key].valid and b[key].valid
    ]
    out.sort(key=lambda row: -row.z_raw)
    return out


def emphasis_to_csv(profile) -> str:
    lines = ["seed,target,z_raw,z_denoised,delta_z"]
    for row in profile:
        lines.append(
            f"{row.pair[0]},{row.pair[1]},{format_float(row.z_raw)},"
            f"{format_float(row.z_denoised)},{format_float(row.delta_z)}"
        )
    return "\n".join(lines) + "\n"


def emphasis_statistics(profile, high_pairs, low_pairs) -> dict:
    """Mean delta z on high vs low pairs and Spearman(z_raw, delta z)."""
    delta = {row.pair: row.delta_z for row in profile}
    high = [delta[tuple(p)] for p in high_pairs if tuple(p) in delta]
    low = [delta[tuple(p)] for p in low_pairs if tuple(p) in delta]
    rho = spearmanr([r.z_raw for r in profile], [r.delta_z for r in profile]).statistic
    return {
        "mean_delta_high": float(np.mean(high)) if high else math.nan,
        "mean_delta_low": float(np.mean(low)) if low else math.nan,
        "spearman": float(rho),
    }


def load_regions(path) -> list:
    """Region CSV ``region_name,voxel_index``; rows of one region are merged in order."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and lines[0].replace(" ", "").lower() == "region_name,voxel_index":
        lines = lines[1:]
    grouped: dict[str, list] = {}
    for row_no, line in enumerate(lines, start=1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 2:
            raise ParseError(f"expected 2 columns, found {len(cells)}", path, row=row_no)
        try:
            grouped.setdefault(cells[0], []).append(int(cells[1]))
        except ValueError:
            raise ParseError(f"voxel index is not an integer: {cells[1]!r}", path, row_no, 2) from None
    return [RegionSpec(name, tuple(idx)) for name, idx in grouped.items()]


def save_regions(regions, path) -> None:
    lines = ["region_name,voxel_index"]
    for region in regions:
        lines.extend(f"{region.name},{i}" for i in region.voxel_indices)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_report(path) -> ConnectivityReport:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    header = [h.strip() for h in lines[0].split(",")]
    if header[:4] != ["seed", "target", "r", "z"]:
        raise ParseError("expected header seed,target,r,z[,n_subjects]", path, row=0)
    rows = []
    n_subjects = None
    for row_no, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        try:
            r, z = float(cells[2]), float(cells[3])
        except (ValueError, IndexError):
            raise ParseError(f"bad report row {line!r}", path, row=row_no) from None
        if len(cells) > 4:
            n_subjects = int(cells[4])
        error = None if math.isfinite(r) and math.isfinite(z) else "undefined correlation"
        rows.append(ConnectivityRow(cells[0], cells[1], r, z, error))
    return ConnectivityReport(tuple(rows), n_subjects, "fisher-mean" if n_subjects else None)


def load_pairs(path) -> tuple:
    """Pair CSV ``seed,target,kind`` with kind in {high, low}."""
    high, low = [], []
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    for row_no, line in enumerate(lines[1:], start=1):
        seed, target, kind = (c.strip() for c in line.split(","))
        if kind not in ("high", "low"):
            raise ParseError(f"pair kind must be high or low, got {kind!r}", path, row_no, 3)
        (high if kind == "high" else low).append((seed, target))
    return tuple(high), tuple(low)


def save_pairs(high, low, path) -> None:
    lines = ["seed,target,kind"]
    lines.extend(f"{s},{t},high" for s, t in high)
    lines.extend(f"{s},{t},low" for s, t in low)
    atomic_write_text(path, "\n".join(lines) + "\n")
