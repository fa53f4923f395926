"""Orthogonal matching pursuit and K-SVD.

OMP keeps, per signal, an orthonormal basis of the selected atoms built by
Gram-Schmidt with one re-orthogonalization pass, i.e. a QR factorization
grown one column per step. Coefficients come from the triangular factor, so
the normal equations are never formed. Many signals are coded at once in
fixed-size column chunks; each chunk is processed identically whether chunks
run sequentially or on a thread pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    UNIT_NORM_TOL,
    CoefficientMatrix,
    ConstraintViolation,
    DegenerateTrainingError,
    Dictionary,
    DimensionError,
    SignalMatrix,
    ValidationError,
    atomic_write_text,
    format_float,
)

DEFAULT_RELATIVE_TOL = 1e-12
# An atom whose component orthogonal to the already selected ones is this
# short is treated as linearly dependent on them.
RANK_TOL = 1e-10
# Columns closer than this (|cosine|) to an already chosen initial atom are
# skipped during K-SVD initialization.
INIT_COHERENCE_LIMIT = 0.99
_CHUNK_BYTES = 32 * 2**20


@dataclass
class OmpResult:
    support: list
    coefficients: np.ndarray
    residual_norm: float
    rank_deficient: bool = False


@dataclass
class KsvdTrace:
    objective_per_iteration: list = field(default_factory=list)
    replaced_atoms_per_iteration: list = field(default_factory=list)
    initial_objective: float = float("nan")

    def to_csv(self) -> str:
        lines = ["iteration,objective,replaced_atoms"]
        lines.append(f"0,{format_float(self.initial_objective)},0")
        for i, (obj, rep) in enumerate(
            zip(self.objective_per_iteration, self.replaced_atoms_per_iteration), start=1
        ):
            lines.append(f"{i},{format_float(obj)},{rep}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def _atoms_of(dictionary) -> np.ndarray:
    if isinstance(dictionary, Dictionary):
        return dictionary.atoms
    atoms = np.asarray(dictionary, dtype=np.float64)
    norms = np.linalg.norm(atoms, axis=0)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValidationError("dictionary atoms must have unit norm")
    return atoms


def _default_threads() -> int:
    value = os.environ.get("DLSC_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ValidationError(f"DLSC_THREADS must be an integer, got {value!r}") from None
    return 1


def _omp_chunk(atoms, X, sparsity, tol):
    """Code every column of ``X``; returns (support, coeffs, counts, rank_flags)."""
    n, k = atoms.shape
    b = X.shape[1]
    steps = min(sparsity, k)
    support = np.full((b, steps), -1, dtype=np.int64)
    basis = np.zeros((b, steps, n))
    tri = np.zeros((b, steps, steps))
    qx = np.zeros((b, steps))
    counts = np.zeros(b, dtype=np.int64)
    rank_flag = np.zeros(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    resid = X.copy()
    rows = np.arange(b)

    for s in range(steps):
        res_norm = np.sqrt(np.einsum("nb,nb->b", resid, resid))
        active &= res_norm > tol
        if not active.any():
            break
        corr = atoms.T @ resid
        pick = np.argmax(np.abs(corr), axis=0)
        if s:
            active &= ~(support[:, :s] == pick[:, None]).any(axis=1)
        d = atoms[:, pick].T
        qs = basis[:, :s, :]
        h1 = np.matmul(qs, d[:, :, None])[:, :, 0]
        q = d - np.matmul(h1[:, None, :], qs)[:, 0, :]
        h2 = np.matmul(qs, q[:, :, None])[:, :, 0]
        q -= np.matmul(h2[:, None, :], qs)[:, 0, :]
        qn = np.sqrt(np.einsum("bn,bn->b", q, q))
        dependent = active & (qn <= RANK_TOL)
        rank_flag |= dependent
        active &= ~dependent
        act = rows[active]
        if act.size == 0:
            break
        q = q[act] / qn[act, None]
        basis[act, s, :] = q
        tri[act, :s, s] = (h1 + h2)[act]
        tri[act, s, s] = qn[act]
        support[act, s] = pick[act]
        qx[act, s] = np.einsum("bn,nb->b", q, X[:, act])
        step = np.einsum("bn,nb->b", q, resid[:, act])
        resid[:, act] -= q.T * step
        counts[act] += 1

    # unused trailing slots: identity on the diagonal, zero right-hand side
    for s in range(steps):
        unused = counts <= s
        tri[unused, s, s] = 1.0
        tri[unused, :s, s] = 0.0
    coeffs = np.linalg.solve(tri, qx[:, :, None])[:, :, 0] if steps else qx
    coeffs[counts[:, None] <= np.arange(steps)[None, :]] = 0.0
    return support, coeffs, counts, rank_flag


def _check_sparsity(sparsity):
    if int(sparsity) != sparsity or sparsity < 1:
        raise ValidationError(f"sparsity must be an integer >= 1, got {sparsity}")
    return int(sparsity)


def _tolerances(X, residual_tol):
    if residual_tol is None:
        return DEFAULT_RELATIVE_TOL * np.linalg.norm(X, axis=0)
    if residual_tol < 0:
        raise ValidationError("residual_tol must be >= 0")
    return np.full(X.shape[1], float(residual_tol))


def omp(signal, dictionary, sparsity: int, residual_tol: float | None = None) -> OmpResult:
    """Greedy sparse approximation of one signal.

    Parameters
    ----------
    signal : array of length N
    dictionary : Dictionary or N x K array with unit-norm columns
    sparsity : int
        Maximum number of selected atoms.
    residual_tol : float, optional
        Absolute residual norm at which selection stops. Defaults to
        ``1e-12 * ||signal||`` so that in practice only ``sparsity`` binds.

    Returns
    -------
    OmpResult
        Support in selection order with aligned least-squares coefficients.
    """
    atoms = _atoms_of(dictionary)
    sparsity = _check_sparsity(sparsity)
    x = np.asarray(signal, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] != atoms.shape[0]:
        raise DimensionError(f"signal length {x.shape[0]} != dictionary rows {atoms.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("signal contains non-finite values")
    support, coeffs, counts, flags = _omp_chunk(atoms, x, sparsity, _tolerances(x, residual_tol))
    m = int(counts[0])
    sup = [int(j) for j in support[0, :m]]
    c = coeffs[0, :m].copy()
    residual = x[:, 0] - atoms[:, sup] @ c
    return OmpResult(sup, c, float(np.linalg.norm(residual)), bool(flags[0]))


def _chunk_columns(n, steps, v):
    per_col = 8 * max(n, 1) * max(steps, 1)
    return max(1, min(v, _CHUNK_BYTES // per_col))


def sparse_code_array(
    X: np.ndarray,
    atoms: np.ndarray,
    sparsity: int,
    residual_tol: float | None = None,
    n_jobs: int | None = None,
) -> np.ndarray:
    """Dense K x V OMP codes of the columns of ``X``."""
    n, k = atoms.shape
    v = X.shape[1]
    tols = _tolerances(X, residual_tol)
    steps = min(sparsity, k)
    width = _chunk_columns(n, steps, v)
    bounds = [(lo, min(lo + width, v)) for lo in range(0, v, width)]
    out = np.zeros((k, v))

    def run(bound):
        lo, hi = bound
        support, coeffs, counts, _ = _omp_chunk(atoms, X[:, lo:hi], sparsity, tols[lo:hi])
        for col in range(hi - lo):
            m = counts[col]
            out[support[col, :m], lo + col] = coeffs[col, :m]

    n_jobs = n_jobs or _default_threads()
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, bounds))
    else:
        for bound in bounds:
            run(bound)
    return out


def sparse_code(
    signals: SignalMatrix,
    dictionary: Dictionary,
    sparsity: int,
    residual_tol: float | None = None,
    n_jobs: int | None = None,
) -> CoefficientMatrix:
    """OMP-code every voxel of ``signals`` independently."""
    sparsity = _check_sparsity(sparsity)
    atoms = _atoms_of(dictionary)
    X = signals.data if isinstance(signals, SignalMatrix) else np.asarray(signals, float)
    if X.shape[0] != atoms.shape[0]:
        raise DimensionError(
            f"signals have {X.shape[0]} frames but dictionary atoms have {atoms.shape[0]}"
        )
    return CoefficientMatrix(sparse_code_array(X, atoms, sparsity, residual_tol, n_jobs), sparsity)


def _initial_atoms(X, k, rng):
    norms = np.linalg.norm(X, axis=0)
    order = [col for col in rng.permutation(X.shape[1]) if norms[col] > 0]
    chosen = np.zeros((X.shape[0], k))
    taken = []
    for col in order:
        cand = X[:, col] / norms[col]
        m = len(taken)
        if m and np.max(np.abs(chosen[:, :m].T @ cand)) >= INIT_COHERENCE_LIMIT:
            continue
        chosen[:, m] = cand
        taken.append(col)
        if m + 1 == k:
            return chosen
    # not enough mutually distinct directions: fill up in permutation order
    rest = [col for col in order if col not in set(taken)]
    if len(taken) + len(rest) < k:
        raise DegenerateTrainingError(
            f"only {len(taken) + len(rest)} non-zero training columns for {k} atoms"
        )
    for m, col in enumerate(rest[: k - len(taken)], start=len(taken)):
        chosen[:, m] = X[:, col] / norms[col]
    return chosen


def _replace_unused(D, A, X, E):
    unused = np.flatnonzero(~A.any(axis=1))
    if unused.size == 0:
        return 0
    err = np.einsum("nv,nv->v", E, E)
    norms = np.linalg.norm(X, axis=0)
    order = np.argsort(-err, kind="stable")
    candidates = (col for col in order if norms[col] > 0)
    for j in unused:
        col = next(candidates, None)
        if col is None:
            raise DegenerateTrainingError(
                f"fewer distinct training columns than the {unused.size} atoms needing replacement"
            )
        D[:, j] = X[:, col] / norms[col]
    return int(unused.size)


def ksvd_train(
    training: SignalMatrix,
    k_atoms: int,
    sparsity: int,
    iterations: int = 30,
    rng_seed: int = 0,
    residual_tol: float | None = None,
    n_jobs: int | None = None,
):
    """Learn ``k_atoms`` unit-norm atoms for ``training`` by K-SVD.

    Each iteration codes the training columns with OMP against the current
    atoms, then sweeps the atoms in ascending order replacing atom ``j`` and
    its coefficient row (over the columns that use it) with the leading
    singular pair of the residual that excludes atom ``j``. Atoms nobody uses
    are then replaced by the worst-represented training columns.

    A column's new OMP code is kept only if it does not fit worse than the
    code it had after the previous sweep, which makes the recorded objective
    non-increasing.

    Returns
    -------
    (Dictionary, CoefficientMatrix, KsvdTrace)
    """
    X = training.data if isinstance(training, SignalMatrix) else np.asarray(training, float)
    sparsity = _check_sparsity(sparsity)
    n, v = X.shape
    if k_atoms < 1:
        raise ValidationError("k_atoms must be >= 1")
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if v < k_atoms:
        raise ConstraintViolation(
            f"V_r = {v} training voxels < K_l = {k_atoms} learned atoms; "
            "the training set must satisfy the condition V_r >= K_l"
        )
    rng = np.random.default_rng(rng_seed)
    D = _initial_atoms(X, k_atoms, rng)
    trace = KsvdTrace()
    A = None
    E = None
    for _ in range(iterations):
        A_new = sparse_code_array(X, D, sparsity, residual_tol, n_jobs)
        E_new = X - D @ A_new
        if A is None:
            A, E = A_new, E_new
            trace.initial_objective = float(np.einsum("nv,nv->", E, E))
        else:
            better = np.einsum("nv,nv->v", E_new, E_new) <= np.einsum("nv,nv->v", E, E)
            A[:, better] = A_new[:, better]
            E[:, better] = E_new[:, better]

        for j in range(k_atoms):
            users = np.flatnonzero(A[j])
            if users.size == 0:
                continue
            Ej = E[:, users] + np.outer(D[:, j], A[j, users])
            u, s, vt = np.linalg.svd(Ej, full_matrices=False)
            D[:, j] = u[:, 0]
            A[j, users] = s[0] * vt[0]
            E[:, users] = Ej - np.outer(D[:, j], A[j, users])

        replaced = _replace_unused(D, A, X, E)
        D /= np.linalg.norm(D, axis=0)
        trace.objective_per_iteration.append(float(np.einsum("nv,nv->", E, E)))
        trace.replaced_atoms_per_iteration.append(replaced)

    labels = tuple(f"learned_{j}" for j in range(k_atoms))
    return Dictionary(D, 0, labels), CoefficientMatrix(A, sparsity), trace


def mutual_coherence(dictionary) -> float:
    """Largest |inner product| between two distinct atoms."""
    atoms = _atoms_of(dictionary)
    if atoms.shape[1] < 2:
        raise ValidationError("mutual coherence needs at least two atoms")
    gram = np.abs(atoms.T @ atoms)
    np.fill_diagonal(gram, 0.0)
    return float(min(gram.max(), 1.0))
