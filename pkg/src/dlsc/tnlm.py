"""Temporal non-local means: neighbourhood averaging weighted by series correlation.

For voxel v the output is ``sum_u w(v, u) x_u / sum_u w(v, u)`` over voxels u
within Chebyshev distance ``distance_param`` of v (v included), with
``w(v, u) = exp((r(v, u) - 1) / h**2)`` and r the Pearson correlation of the
raw series. For z-normalized series ``||x_v - x_u||^2 = 2 N (1 - r)``, so this
is the usual NLM Gaussian kernel with the length dependence folded into h.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import ParseError, SignalMatrix, ValidationError

DEFAULT_DISTANCE = 11
DEFAULT_SMOOTHING = 0.72


@dataclass(frozen=True)
class TnlmParams:
    distance_param: int = DEFAULT_DISTANCE
    smoothing_level: float = DEFAULT_SMOOTHING
    voxel_layout: object = "linear"

    def __post_init__(self):
        if int(self.distance_param) != self.distance_param or self.distance_param < 1:
            raise ValidationError("distance_param must be an integer >= 1")
        if not self.smoothing_level > 0:
            raise ValidationError("smoothing_level must be positive")
        if isinstance(self.voxel_layout, str):
            if self.voxel_layout != "linear":
                raise ValidationError(f"unknown voxel layout {self.voxel_layout!r}")
        else:
            coords = np.asarray(self.voxel_layout)
            if coords.ndim != 2 or coords.shape[1] != 3:
                raise ValidationError("voxel coordinates must be integer triples")
            if not np.array_equal(coords, np.round(coords)):
                raise ValidationError("voxel coordinates must be integers")
            coords = coords.astype(np.int64)
            coords.setflags(write=False)
            object.__setattr__(self, "voxel_layout", coords)


def _neighbourhoods(params: TnlmParams, n_voxels: int):
    d = int(params.distance_param)
    if isinstance(params.voxel_layout, str):
        return [np.arange(max(0, v - d), min(n_voxels, v + d + 1)) for v in range(n_voxels)]
    coords = params.voxel_layout
    if coords.shape[0] != n_voxels:
        raise ValidationError(f"{coords.shape[0]} coordinates for {n_voxels} voxels")
    tree = cKDTree(coords)
    # integer coordinates: +0.5 keeps the closed ball without float edge effects
    hoods = tree.query_ball_point(coords, r=d + 0.5, p=np.inf)
    return [np.array(sorted(h), dtype=np.int64) for h in hoods]


def _unit_centered(X):
    centered = X - X.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    out = np.zeros_like(centered)
    ok = norms > 0
    out[:, ok] = centered[:, ok] / norms[ok]
    return out


def tnlm_denoise(signals: SignalMatrix, params: TnlmParams | None = None) -> SignalMatrix:
    """Correlation-weighted neighbourhood average of every voxel's series.

    Pairs involving a zero-variance series use r = 0. The self weight is
    exactly 1, so a voxel with no neighbours is returned unchanged.
    """
    params = params or TnlmParams()
    X = signals.data
    n_voxels = X.shape[1]
    hoods = _neighbourhoods(params, n_voxels)
    Z = _unit_centered(X)
    inv_h2 = 1.0 / float(params.smoothing_level) ** 2
    out = np.empty_like(X)
    for v, hood in enumerate(hoods):
        if hood.size == 1:
            out[:, v] = X[:, v]
            continue
        r = np.clip(Z[:, hood].T @ Z[:, v], -1.0, 1.0)
        w = np.exp((r - 1.0) * inv_h2)
        w[hood == v] = 1.0
        out[:, v] = X[:, hood] @ w / w.sum()
    return SignalMatrix(out, signals.tr_seconds)


def load_coordinates(path) -> np.ndarray:
    """Coordinate CSV with header ``x,y,z``, one integer triple per voxel."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and lines[0].replace(" ", "").lower() == "x,y,z":
        lines = lines[1:]
    coords = []
    for row_no, line in enumerate(lines, start=1):
        cells = line.split(",")
        if len(cells) != 3:
            raise ParseError(f"expected 3 columns, found {len(cells)}", path, row=row_no)
        try:
            coords.append([int(c) for c in cells])
        except ValueError:
            raise ParseError(f"non-integer coordinate in {line!r}", path, row=row_no) from None
    return np.array(coords, dtype=np.int64).reshape(-1, 3)
