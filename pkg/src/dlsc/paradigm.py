"""Task regressors: canonical double-gamma HRF, boxcars and their convolution.

The fixed sub-dictionary is one unit-norm regressor per task condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gamma

from .core import (
    DegenerateAtomError,
    Dictionary,
    HeaderError,
    ParseError,
    ValidationError,
    atomic_write_text,
    format_float,
    parse_header_value,
)

# Relative slack when mapping event edges onto a sampling grid, so that an
# edge landing exactly on a sample (up to rounding) is treated as on it.
_GRID_EPS = 1e-9


@dataclass(frozen=True)
class TaskParadigm:
    """Ordered conditions, each a tuple of ``(onset_s, duration_s)`` events."""

    conditions: tuple
    total_duration_seconds: float

    def __post_init__(self):
        total = float(self.total_duration_seconds)
        if not total > 0:
            raise ValidationError("total_duration_seconds must be positive")
        conds = []
        seen = set()
        for name, events in self.conditions:
            if name in seen:
                raise ValidationError(f"duplicate condition name {name!r}")
            seen.add(name)
            evs = []
            for onset, duration in events:
                onset, duration = float(onset), float(duration)
                if onset < 0 or duration <= 0:
                    raise ValidationError(
                        f"condition {name!r}: bad event ({onset}, {duration})"
                    )
                if onset + duration > total + 1e-9:
                    raise ValidationError(
                        f"condition {name!r}: event ends at {onset + duration} s "
                        f"after the run ({total} s)"
                    )
                evs.append((onset, duration))
            conds.append((str(name), tuple(evs)))
        object.__setattr__(self, "conditions", tuple(conds))
        object.__setattr__(self, "total_duration_seconds", total)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.conditions]

    def events(self, condition: str) -> tuple:
        for name, evs in self.conditions:
            if name == condition:
                return evs
        raise KeyError(f"unknown condition {condition!r}; known: {', '.join(self.names)}")


@dataclass(frozen=True)
class HrfSpec:
    """Double-gamma shape. Defaults are the usual SPM canonical values."""

    peak_delay: float = 6.0
    undershoot_delay: float = 16.0
    peak_dispersion: float = 1.0
    undershoot_dispersion: float = 1.0
    undershoot_ratio: float = 6.0
    kernel_length_seconds: float = 32.0
    oversample_factor: int = 16

    def __post_init__(self):
        positive = (
            "peak_delay",
            "undershoot_delay",
            "peak_dispersion",
            "undershoot_dispersion",
            "undershoot_ratio",
            "kernel_length_seconds",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"HrfSpec.{name} must be positive")
        if int(self.oversample_factor) != self.oversample_factor or self.oversample_factor < 1:
            raise ValidationError("HrfSpec.oversample_factor must be an integer >= 1")


def canonical_hrf(spec: HrfSpec, dt: float) -> np.ndarray:
    """Sample the double-gamma HRF on ``0, dt, 2 dt, ...`` up to the kernel length.

    The peak lobe is a gamma density with shape ``peak_delay / peak_dispersion``
    and scale ``peak_dispersion``; the undershoot is built the same way and
    divided by ``undershoot_ratio``. The samples are scaled to a maximum of 1.
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if dt > spec.kernel_length_seconds:
        raise ValidationError("dt exceeds the kernel length")
    n = int(math.floor(spec.kernel_length_seconds / dt + _GRID_EPS)) + 1
    t = np.arange(n) * dt
    peak = gamma.pdf(t, spec.peak_delay / spec.peak_dispersion, scale=spec.peak_dispersion)
    under = gamma.pdf(
        t, spec.undershoot_delay / spec.undershoot_dispersion, scale=spec.undershoot_dispersion
    )
    h = peak - under / spec.undershoot_ratio
    return h / h.max()


def _grid_index(seconds: float, step: float) -> int:
    return int(math.ceil(seconds / step - _GRID_EPS))


def boxcar(paradigm: TaskParadigm, condition: str, n_frames: int, tr: float) -> np.ndarray:
    """0/1 indicator: frame ``i`` is on when ``i * tr`` lies in ``[onset, onset + duration)``."""
    if n_frames < 1:
        raise ValidationError("n_frames must be >= 1")
    if not tr > 0:
        raise ValidationError("tr must be positive")
    out = np.zeros(n_frames)
    for onset, duration in paradigm.events(condition):
        start = max(_grid_index(onset, tr), 0)
        stop = min(_grid_index(onset + duration, tr), n_frames)
        if stop > start:
            out[start:stop] = 1.0
    return out


def stimulus_regressor(
    paradigm: TaskParadigm,
    condition: str,
    n_frames: int,
    tr: float,
    spec: HrfSpec | None = None,
) -> np.ndarray:
    """HRF-convolved boxcar, computed on the oversampled grid and read back at frame times."""
    spec = spec or HrfSpec()
    factor = int(spec.oversample_factor)
    dt = tr / factor
    fine = boxcar(paradigm, condition, n_frames * factor, dt)
    kernel = canonical_hrf(spec, dt)
    response = np.convolve(fine, kernel)[: n_frames * factor]
    return response[::factor].copy()


def build_fixed_dictionary(
    paradigm: TaskParadigm, n_frames: int, tr: float, spec: HrfSpec | None = None
) -> Dictionary:
    """One unit-norm atom per condition, labelled by condition name."""
    if not paradigm.conditions:
        raise ValidationError("paradigm has no conditions")
    columns = []
    for name in paradigm.names:
        reg = stimulus_regressor(paradigm, name, n_frames, tr, spec)
        norm = np.linalg.norm(reg)
        if norm == 0:
            raise DegenerateAtomError(
                f"condition {name!r} produces an all-zero regressor within {n_frames} frames"
            )
        columns.append(reg / norm)
    return Dictionary(np.column_stack(columns), len(columns), tuple(paradigm.names))


MOTOR_BLOCK_ORDER = ("lh", "lf", "rh", "rf", "t", "lh", "lf", "rh", "rf", "t")
MOTOR_CUE_SECONDS = 3.0
MOTOR_BLOCK_SECONDS = 12.0
MOTOR_FIXATION_SECONDS = 15.0
MOTOR_FIXATION_AFTER = (3, 6, 9)
MOTOR_TOTAL_SECONDS = 214.0
MOTOR_TR = 0.72
MOTOR_FRAMES = 284


def default_motor_paradigm() -> TaskParadigm:
    """Motor run: ten cued 12 s movement blocks plus three 15 s fixations.

    Blocks are packed from t = 0 in the order lh, lf, rh, rf, t (twice); a
    fixation follows blocks 3, 6 and 9. Fixation carries no regressor.
    """
    events = {name: [] for name in ("cue", "lh", "lf", "rh", "rf", "t")}
    clock = 0.0
    for block_no, effector in enumerate(MOTOR_BLOCK_ORDER, start=1):
        events["cue"].append((clock, MOTOR_CUE_SECONDS))
        clock += MOTOR_CUE_SECONDS
        events[effector].append((clock, MOTOR_BLOCK_SECONDS))
        clock += MOTOR_BLOCK_SECONDS
        if block_no in MOTOR_FIXATION_AFTER:
            clock += MOTOR_FIXATION_SECONDS
    return TaskParadigm(tuple(events.items()), MOTOR_TOTAL_SECONDS)


def load_paradigm(path) -> TaskParadigm:
    """Read ``total=<s>`` then ``condition,onset_seconds,duration_seconds`` rows."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise HeaderError("empty paradigm file", path)
    total = parse_header_value(lines[0], "total", path)
    body = lines[1:]
    if body and body[0].replace(" ", "").lower() == "condition,onset_seconds,duration_seconds":
        body = body[1:]
    conditions: dict[str, list] = {}
    for row_no, line in enumerate(body, start=1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 3:
            raise ParseError(f"expected 3 columns, found {len(cells)}", path, row=row_no)
        name, onset, duration = cells
        try:
            conditions.setdefault(name, []).append((float(onset), float(duration)))
        except ValueError:
            raise ParseError(f"non-numeric timing in {line!r}", path, row=row_no) from None
    return TaskParadigm(tuple(conditions.items()), total)


def save_paradigm(paradigm: TaskParadigm, path) -> None:
    lines = [
        f"total={format_float(paradigm.total_duration_seconds)}",
        "condition,onset_seconds,duration_seconds",
    ]
    for name, evs in paradigm.conditions:
        lines.extend(f"{name},{format_float(o)},{format_float(d)}" for o, d in evs)
    atomic_write_text(path, "\n".join(lines) + "\n")
