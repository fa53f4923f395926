"""Shared domain types, matrix file formats and validation.

Orientation is fixed everywhere: rows are time frames (N), columns are
voxels (V). All arrays are float64 and are copied + frozen on construction,
so instances can be shared read-only between threads.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

UNIT_NORM_TOL = 1e-9

BINARY_MAGIC = b"DLSC"
BINARY_VERSION = 1
_BINARY_HEADER = struct.Struct("<4sHQQd")


class DlscError(Exception):
    """Base class of every error raised by this package."""

    category = "error"


class ParseError(DlscError, ValueError):
    category = "parse"

    def __init__(self, message, path=None, row=None, column=None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where) + ": " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.row = row
        self.column = column


class HeaderError(ParseError):
    pass


class NonNumericError(ParseError):
    pass


class InconsistentRowError(ParseError):
    pass


class NonFiniteError(ParseError):
    pass


class ValidationError(DlscError, ValueError):
    category = "invalid"


class DimensionError(ValidationError):
    pass


class ConstraintViolation(DlscError, ValueError):
    """Raised when fewer training voxels than learned atoms survive."""

    category = "constraint"


class DegenerateAtomError(DlscError, ValueError):
    category = "degenerate"


class DegenerateTrainingError(DlscError, ValueError):
    category = "degenerate"


class StageError(DlscError):
    """Wraps a failure inside one pipeline stage, keeping the original."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
        self.category = getattr(cause, "category", "error")


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """N x V time-series matrix sampled every ``tr_seconds``."""

    data: np.ndarray
    tr_seconds: float

    def __post_init__(self):
        data = _frozen(self.data, 2, "signal data")
        if data.shape[0] < 2 or data.shape[1] < 1:
            raise DimensionError(f"need N >= 2 frames and V >= 1 voxels, got {data.shape}")
        tr = float(self.tr_seconds)
        if not (math.isfinite(tr) and tr > 0):
            raise ValidationError(f"tr_seconds must be positive, got {self.tr_seconds}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "tr_seconds", tr)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.data.shape[1]

    def columns(self, mask_or_index) -> "SignalMatrix":
        return SignalMatrix(self.data[:, mask_or_index], self.tr_seconds)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Unit-norm atoms as columns; the first ``fixed_count`` are the fixed block."""

    atoms: np.ndarray
    fixed_count: int = 0
    atom_labels: tuple = field(default=())

    def __post_init__(self):
        atoms = _frozen(self.atoms, 2, "dictionary atoms")
        k = atoms.shape[1]
        if k < 1:
            raise DimensionError("dictionary needs at least one atom")
        if not 0 <= self.fixed_count <= k:
            raise ValidationError(f"fixed_count {self.fixed_count} outside [0, {k}]")
        norms = np.linalg.norm(atoms, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise ValidationError(
                f"atom {int(bad[0])} has norm {norms[bad[0]]!r}, expected 1 within {UNIT_NORM_TOL}"
            )
        labels = tuple(self.atom_labels)
        if not labels:
            labels = tuple(f"fixed_{j}" for j in range(self.fixed_count)) + tuple(
                f"learned_{j}" for j in range(k - self.fixed_count)
            )
        if len(labels) != k:
            raise ValidationError(f"{len(labels)} labels for {k} atoms")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "fixed_count", int(self.fixed_count))
        object.__setattr__(self, "atom_labels", labels)

    @classmethod
    def from_columns(cls, columns, fixed_count=0, atom_labels=()) -> "Dictionary":
        """Normalize arbitrary non-zero columns and wrap them."""
        cols = np.asarray(columns, dtype=np.float64)
        norms = np.linalg.norm(cols, axis=0)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise DegenerateAtomError(f"atom {int(zero[0])} is all zeros")
        return cls(cols / norms, fixed_count, tuple(atom_labels))

    @property
    def n_frames(self) -> int:
        return self.atoms.shape[0]

    @property
    def size(self) -> int:
        return self.atoms.shape[1]

    @property
    def learned_count(self) -> int:
        return self.size - self.fixed_count

    @property
    def fixed(self) -> np.ndarray:
        return self.atoms[:, : self.fixed_count]

    @property
    def learned(self) -> np.ndarray:
        return self.atoms[:, self.fixed_count :]


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """K x V codes with at most ``sparsity_bound`` non-zeros per column."""

    coeffs: np.ndarray
    sparsity_bound: int

    def __post_init__(self):
        coeffs = _frozen(self.coeffs, 2, "coefficients")
        lam = int(self.sparsity_bound)
        if lam < 1:
            raise ValidationError(f"sparsity_bound must be >= 1, got {self.sparsity_bound}")
        counts = np.count_nonzero(coeffs, axis=0)
        bad = np.flatnonzero(counts > lam)
        if bad.size:
            raise ValidationError(
                f"column {int(bad[0])} has {int(counts[bad[0]])} non-zeros, bound is {lam}"
            )
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "sparsity_bound", lam)


@dataclass(frozen=True)
class DlscParams:
    """Operating point (K, lambda, C_th) plus training plumbing."""

    dict_size: int = 400
    sparsity: int = 40
    corr_threshold: float = 0.1
    ksvd_iterations: int = 30
    rng_seed: int = 0

    def __post_init__(self):
        if self.sparsity < 1 or self.sparsity > self.dict_size:
            raise ValidationError(
                f"sparsity must lie in [1, K={self.dict_size}], got {self.sparsity}"
            )
        if not 0.0 <= self.corr_threshold < 1.0:
            raise ValidationError(f"corr_threshold must lie in [0, 1), got {self.corr_threshold}")
        if self.ksvd_iterations < 1:
            raise ValidationError("ksvd_iterations must be >= 1")
        if self.rng_seed < 0:
            raise ValidationError("rng_seed must be unsigned")

    def check_fixed_count(self, fixed_count: int) -> None:
        if self.dict_size <= fixed_count:
            raise ValidationError(
                f"dict_size K={self.dict_size} leaves no learned atoms next to "
                f"{fixed_count} fixed atoms"
            )


def validate_column_sparsity(a: CoefficientMatrix) -> bool:
    """True iff every column has at most ``a.sparsity_bound`` exact non-zeros."""
    coeffs = np.asarray(a.coeffs)
    if coeffs.size == 0:
        return True
    return bool(np.count_nonzero(coeffs, axis=0).max() <= a.sparsity_bound)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the destination directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_float(x: float) -> str:
    return "%.17g" % x


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown matrix format {fmt!r}")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "binary"


def save_signal_matrix(m: SignalMatrix, path, format: str | None = None) -> None:
    """Write ``m`` as CSV ("tr=" header line) or little-endian binary."""
    fmt = _infer_format(path, format)
    if fmt == "binary":
        header = _BINARY_HEADER.pack(
            BINARY_MAGIC, BINARY_VERSION, m.n_frames, m.n_voxels, m.tr_seconds
        )
        body = np.ascontiguousarray(m.data, dtype="<f8").tobytes(order="C")
        atomic_write_bytes(path, header + body)
    else:
        lines = [f"tr={format_float(m.tr_seconds)}"]
        lines.extend(",".join(format_float(x) for x in row) for row in m.data)
        atomic_write_text(path, "\n".join(lines) + "\n")


def load_signal_matrix(path, format: str | None = None) -> SignalMatrix:
    """Read a matrix written by :func:`save_signal_matrix`.

    Parse failures raise a :class:`ParseError` subclass naming the data row
    (1-based, header excluded) and column (1-based) at fault.
    """
    fmt = _infer_format(path, format)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if fmt == "binary":
        return _parse_binary(raw, path)
    return _parse_csv(raw.decode("utf-8"), path)


def _parse_binary(raw: bytes, path) -> SignalMatrix:
    if len(raw) < _BINARY_HEADER.size:
        raise HeaderError("file shorter than binary header", path)
    magic, version, n, v, tr = _BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise HeaderError(f"bad magic {magic!r}", path)
    if version != BINARY_VERSION:
        raise HeaderError(f"unsupported format version {version}", path)
    expected = _BINARY_HEADER.size + 8 * n * v
    if len(raw) != expected:
        raise HeaderError(f"expected {expected} bytes for {n}x{v}, found {len(raw)}", path)
    if not (math.isfinite(tr) and tr > 0):
        raise HeaderError(f"invalid tr {tr!r}", path)
    data = np.frombuffer(raw, dtype="<f8", count=n * v, offset=_BINARY_HEADER.size)
    data = data.reshape(n, v).astype(np.float64)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = bad[0]
        raise NonFiniteError("non-finite value", path, int(r) + 1, int(c) + 1)
    return SignalMatrix(data, tr)


def parse_header_value(line: str, key: str, path=None) -> float:
    text = line.strip()
    prefix = f"{key}="
    if not text.startswith(prefix):
        raise HeaderError(f"expected header '{prefix}<value>', got {text!r}", path, row=0)
    try:
        value = float(text[len(prefix) :])
    except ValueError:
        raise HeaderError(f"header value is not a number: {text!r}", path, row=0) from None
    if not (math.isfinite(value) and value > 0):
        raise HeaderError(f"header value must be positive: {text!r}", path, row=0)
    return value


def _parse_csv(text: str, path) -> SignalMatrix:
    lines = text.splitlines()
    if not lines:
        raise HeaderError("empty file", path)
    tr = parse_header_value(lines[0], "tr", path)
    rows = []
    width = None
    for row_no, line in enumerate((ln for ln in lines[1:] if ln.strip()), start=1):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise InconsistentRowError(
                f"expected {width} columns, found {len(cells)}", path, row=row_no
            )
        values = []
        for col_no, cell in enumerate(cells, start=1):
            try:
                x = float(cell)
            except ValueError:
                raise NonNumericError(f"not a number: {cell.strip()!r}", path, row_no, col_no) from None
            if not math.isfinite(x):
                raise NonFiniteError(f"non-finite value {cell.strip()!r}", path, row_no, col_no)
            values.append(x)
        rows.append(values)
    if not rows:
        raise ParseError("no data rows", path)
    return SignalMatrix(np.array(rows, dtype=np.float64), tr)


def save_dictionary(d: Dictionary, path) -> None:
    """CSV: header ``fixed=<K_f>``, then a label row, then N frame rows."""
    lines = [f"fixed={d.fixed_count}", ",".join(d.atom_labels)]
    lines.extend(",".join(format_float(x) for x in row) for row in d.atoms)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_dictionary(path) -> Dictionary:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("fixed="):
        raise HeaderError("expected 'fixed=<count>' header, label row and data rows", path)
    fixed = int(lines[0][len("fixed=") :])
    labels = lines[1].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]])
    return Dictionary(data, fixed, tuple(labels))


def save_coefficients(a: CoefficientMatrix, path) -> None:
    """Sparse triplet CSV: header ``shape=KxV;lambda=L`` then atom,voxel,value."""
    k, v = a.coeffs.shape
    rows, cols = np.nonzero(a.coeffs)
    order = np.lexsort((rows, cols))
    lines = [f"shape={k}x{v};lambda={a.sparsity_bound}", "atom,voxel,value"]
    lines.extend(
        f"{rows[i]},{cols[i]},{format_float(a.coeffs[rows[i], cols[i]])}" for i in order
    )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_coefficients(path) -> CoefficientMatrix:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = dict(part.split("=") for part in lines[0].split(";"))
    k, v = (int(x) for x in head["shape"].split("x"))
    coeffs = np.zeros((k, v))
    for ln in lines[2:]:
        i, j, x = ln.split(",")
        coeffs[int(i), int(j)] = float(x)
    return CoefficientMatrix(coeffs, int(head["lambda"]))


def as_signal_matrix(x, tr_seconds: float = 1.0) -> SignalMatrix:
    if isinstance(x, SignalMatrix):
        return x
    return SignalMatrix(np.asarray(x, dtype=np.float64), tr_seconds)


def check_indices(indices: Sequence[int], bound: int, what: str) -> np.ndarray:
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise ValidationError(f"{what}: index out of range [0, {bound})")
    if np.unique(idx).size != idx.size:
        raise ValidationError(f"{what}: duplicate indices")
    return idx
