"""Semi-supervised DLSC denoising and the (K, lambda, C_th) grid search.

Steps of :func:`dlsc_denoise`:

1. fixed atoms from the task paradigm,
2. training voxels = those whose max |Pearson r| with every fixed atom is
   below ``C_th`` (a column subset of S),
3. K-SVD on the training voxels for ``K - K_f`` learned atoms,
4. D = [fixed, learned] with columns re-normalized,
5. OMP coding of every voxel against D,
6. denoised = D A.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .connectivity import ConnectivityReport, connectivity_map
from .core import (
    CoefficientMatrix,
    ConstraintViolation,
    DimensionError,
    Dictionary,
    DlscError,
    DlscParams,
    SignalMatrix,
    StageError,
    ValidationError,
    format_float,
    validate_column_sparsity,
)
from .paradigm import HrfSpec, TaskParadigm, build_fixed_dictionary
from .sparse import KsvdTrace, ksvd_train, sparse_code

log = logging.getLogger(__name__)

DEFAULT_OPERATING_POINT = (400, 40, 0.1)


@dataclass
class DenoiseOutput:
    denoised: SignalMatrix
    dictionary: Dictionary
    coefficients: CoefficientMatrix
    training_mask: np.ndarray
    trace: KsvdTrace


def _zscore_columns(X):
    centered = X - X.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    out = np.zeros_like(centered)
    ok = norms > 0
    out[:, ok] = centered[:, ok] / norms[ok]
    return out


def max_abs_correlation(signals: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Per voxel, max over atoms of |Pearson r|; zero-variance voxels get 0."""
    r = _zscore_columns(atoms).T @ _zscore_columns(signals)
    return np.clip(np.abs(r), 0.0, 1.0).max(axis=0)


def select_training_voxels(
    signals: SignalMatrix, fixed: Dictionary, c_th: float, k_l: int
) -> np.ndarray:
    """Boolean mask of voxels whose max |r| with the fixed atoms is below ``c_th``.

    A zero-variance voxel counts as uncorrelated (r = 0) and is selected.
    Raises :class:`ConstraintViolation` when fewer than ``k_l`` voxels survive.
    """
    if not 0.0 <= c_th < 1.0:
        raise ValidationError(f"c_th must lie in [0, 1), got {c_th}")
    if fixed.fixed_count < 1:
        raise ValidationError("need at least one fixed atom")
    if fixed.n_frames != signals.n_frames:
        raise DimensionError("fixed atoms and signals differ in frame count")
    mask = max_abs_correlation(signals.data, fixed.fixed) < c_th
    v_r = int(mask.sum())
    if v_r < k_l:
        raise ConstraintViolation(
            f"C_th = {c_th} keeps V_r = {v_r} voxels but K_l = {k_l} learned atoms are "
            "requested; the training set must satisfy the condition V_r >= K_l"
        )
    return mask


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DlscError as exc:
        raise StageError(name, exc) from exc


def dlsc_denoise(
    signals: SignalMatrix,
    paradigm: TaskParadigm,
    hrf: HrfSpec | None = None,
    params: DlscParams | None = None,
    residual_tol: float | None = None,
    n_jobs: int | None = None,
) -> DenoiseOutput:
    """Denoise ``signals`` with fixed task atoms plus K-SVD learned atoms."""
    hrf = hrf or HrfSpec()
    params = params or DlscParams()
    fixed = _stage(
        "fixed-dictionary",
        build_fixed_dictionary,
        paradigm,
        signals.n_frames,
        signals.tr_seconds,
        hrf,
    )
    params.check_fixed_count(fixed.fixed_count)
    k_l = params.dict_size - fixed.fixed_count
    mask = _stage(
        "training-selection", select_training_voxels, signals, fixed, params.corr_threshold, k_l
    )
    log.info("training voxels: %d of %d, learning %d atoms", mask.sum(), mask.size, k_l)
    learned, _, trace = _stage(
        "ksvd",
        ksvd_train,
        signals.columns(mask),
        k_l,
        params.sparsity,
        params.ksvd_iterations,
        params.rng_seed,
        residual_tol,
        n_jobs,
    )
    dictionary = Dictionary.from_columns(
        np.hstack([fixed.atoms, learned.atoms]),
        fixed.fixed_count,
        fixed.atom_labels + learned.atom_labels,
    )
    coefficients = _stage(
        "coding", sparse_code, signals, dictionary, params.sparsity, residual_tol, n_jobs
    )
    assert validate_column_sparsity(coefficients)
    denoised = SignalMatrix(dictionary.atoms @ coefficients.coeffs, signals.tr_seconds)
    mask.setflags(write=False)
    return DenoiseOutput(denoised, dictionary, coefficients, mask, trace)


# --------------------------------------------------------------------------
# grid search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastScorer:
    """Mean Fisher z over high pairs minus mean Fisher z over low pairs."""

    seeds: tuple
    targets: tuple
    high_pairs: tuple
    low_pairs: tuple
    name: str = "contrast"

    def __call__(self, output: DenoiseOutput):
        report = connectivity_map(output.denoised, list(self.seeds), list(self.targets))
        return contrast_score(report, self.high_pairs, self.low_pairs), report


@dataclass(frozen=True)
class TruthErrorScorer:
    """Negative mean squared error against a known clean matrix (phantoms only)."""

    clean: np.ndarray
    name: str = "truth-mse"

    def __call__(self, output: DenoiseOutput):
        err = output.denoised.data - self.clean
        return -float(np.mean(err * err)), None


SCORERS = ("contrast", "truth-mse")


def contrast_score(report: ConnectivityReport, high_pairs, low_pairs) -> float:
    z = {(row.seed, row.target): row.z for row in report.rows if row.valid}
    high = [z[p] for p in map(tuple, high_pairs) if p in z]
    low = [z[p] for p in map(tuple, low_pairs) if p in z]
    if not high or not low:
        raise ValidationError("contrast scorer needs at least one valid high and one valid low pair")
    return float(np.mean(high) - np.mean(low))


@dataclass
class GridEntry:
    point: tuple
    params: DlscParams | None
    score: float | None
    connectivity: ConnectivityReport | None = None
    error: str | None = None
    output: DenoiseOutput | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class GridSearchReport:
    entries: list
    scorer: str
    ksvd_iterations: int
    rng_seed: int

    @property
    def best(self) -> GridEntry | None:
        return next((e for e in self.entries if e.ok), None)

    def to_csv(self) -> str:
        lines = ["rank,K,lambda,C_th,iterations,seed,score,status,reason"]
        for rank, e in enumerate(self.entries, start=1):
            k, lam, cth = e.point
            score = "" if e.score is None else format_float(e.score)
            status = "ok" if e.ok else "failed"
            reason = (e.error or "").replace(",", ";").replace("\n", " ")
            lines.append(
                f"{rank},{k},{lam},{cth!r},{self.ksvd_iterations},{self.rng_seed},"
                f"{score},{status},{reason}"
            )
        return "\n".join(lines) + "\n"


def frange(start: float, stop: float, step: float) -> list:
    """Inclusive arithmetic range, robust to float accumulation (0.1:0.4:0.1 -> 4 values)."""
    if step <= 0:
        raise ValidationError("range step must be positive")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise ValidationError(f"empty range {start}:{stop}:{step}")
    decimals = max(0, -int(math.floor(math.log10(step))) + 6)
    return [round(start + i * step, decimals) for i in range(count)]


def _sort_key(entry: GridEntry):
    if not entry.ok:
        return (1, 0.0, 1, entry.point)
    default_first = 0 if entry.point == DEFAULT_OPERATING_POINT else 1
    return (0, -entry.score, default_first, entry.point)


def grid_search(
    signals: SignalMatrix,
    paradigm: TaskParadigm,
    hrf: HrfSpec | None,
    k_grid,
    lambda_grid,
    cth_grid,
    scorer,
    ksvd_iterations: int = 30,
    rng_seed: int = 0,
    keep_outputs: bool = False,
    n_jobs: int | None = None,
    progress=None,
) -> GridSearchReport:
    """Run :func:`dlsc_denoise` at every (K, lambda, C_th) and rank by score.

    Points that fail (e.g. V_r < K_l, or lambda > K) are kept as failed
    entries with the reason instead of aborting the sweep. Successful entries
    come first by descending score; ties put the default operating point
    first, then (K, lambda, C_th) in lexicographic order.
    """
    if not (len(k_grid) and len(lambda_grid) and len(cth_grid)):
        raise ValidationError("grids must be non-empty")
    if not callable(scorer):
        raise ValidationError(f"scorer must be one of {SCORERS}")
    points = [
        (int(k), int(lam), float(cth))
        for k, lam, cth in itertools.product(k_grid, lambda_grid, cth_grid)
    ]
    entries = []
    for i, point in enumerate(points, start=1):
        params = None
        try:
            params = DlscParams(*point, ksvd_iterations, rng_seed)
            output = dlsc_denoise(signals, paradigm, hrf, params, n_jobs=n_jobs)
            score, report = scorer(output)
            if not math.isfinite(score):
                raise ValidationError(f"non-finite score {score}")
            entry = GridEntry(point, params, score, report, output=output if keep_outputs else None)
        except DlscError as exc:
            entry = GridEntry(point, params, None, error=str(exc))
        entries.append(entry)
        if progress is not None:
            progress(i, len(points), entry)
    entries.sort(key=_sort_key)
    return GridSearchReport(entries, getattr(scorer, "name", "custom"), ksvd_iterations, rng_seed)
