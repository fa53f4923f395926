"""Synthetic block-design phantoms with known factorization and connectivity.

Every voxel of a community carries the same clean series, a weighted sum of
the community's generating atoms. Atoms are either task regressors (named by
paradigm condition) or smooth random latents (``latent:<name>``, seeded
Gaussian noise through a 5-frame moving average). Voxels outside every
community are clean zeros. Noise is i.i.d. Gaussian, optionally plus a
Legendre drift and sparse spikes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import legendre

from .connectivity import RegionSpec
from .core import (
    CoefficientMatrix,
    Dictionary,
    DimensionError,
    SignalMatrix,
    ValidationError,
)
from .paradigm import (
    MOTOR_FRAMES,
    MOTOR_TR,
    HrfSpec,
    TaskParadigm,
    default_motor_paradigm,
    stimulus_regressor,
)

LATENT_PREFIX = "latent:"
LATENT_SMOOTHING_FRAMES = 5
NOISE_BLOCK_VOXELS = 256


@dataclass(frozen=True)
class Community:
    name: str
    start: int
    stop: int
    atoms: tuple  # ((atom_name, amplitude), ...)


@dataclass(frozen=True)
class PhantomSpec:
    n_frames: int
    tr: float
    paradigm: TaskParadigm
    n_voxels: int
    communities: tuple
    noise_sigma: float = 0.0
    hrf: HrfSpec = field(default_factory=HrfSpec)
    drift_order: int = 0
    spike_rate: float = 0.0
    # nuisance amplitudes in units of noise_sigma
    drift_scale: float = 2.0
    spike_scale: float = 5.0
    region_size: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_frames < 2 or self.n_voxels < 1 or not self.tr > 0:
            raise ValidationError("need n_frames >= 2, n_voxels >= 1 and tr > 0")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ValidationError("noise_sigma must be finite and >= 0")
        if self.drift_order < 0 or not 0.0 <= self.spike_rate <= 1.0:
            raise ValidationError("drift_order must be >= 0 and spike_rate in [0, 1]")
        if self.region_size < 1:
            raise ValidationError("region_size must be >= 1")
        taken = np.zeros(self.n_voxels, dtype=bool)
        names = set()
        for com in self.communities:
            if com.name in names:
                raise ValidationError(f"duplicate community {com.name!r}")
            names.add(com.name)
            if not 0 <= com.start < com.stop <= self.n_voxels:
                raise ValidationError(f"community {com.name!r} range outside [0, {self.n_voxels})")
            if taken[com.start : com.stop].any():
                raise ValidationError(f"community {com.name!r} overlaps another community")
            taken[com.start : com.stop] = True
            if not com.atoms:
                raise ValidationError(f"community {com.name!r} has no generating atoms")
            for atom, amp in com.atoms:
                if not math.isfinite(amp):
                    raise ValidationError(f"community {com.name!r}: non-finite amplitude")
                if not atom.startswith(LATENT_PREFIX) and atom not in self.paradigm.names:
                    raise ValidationError(f"community {com.name!r}: unknown atom {atom!r}")


@dataclass
class PhantomTruth:
    clean: SignalMatrix
    noisy: SignalMatrix
    true_dictionary: Dictionary
    true_coefficients: CoefficientMatrix
    community_of_voxel: np.ndarray  # -1 outside every community
    community_names: tuple
    seeds: list
    targets: list
    expected_high_pairs: list
    expected_low_pairs: list


def smooth_latent(rng: np.random.Generator, n_frames: int) -> np.ndarray:
    raw = rng.standard_normal(n_frames + LATENT_SMOOTHING_FRAMES - 1)
    kernel = np.full(LATENT_SMOOTHING_FRAMES, 1.0 / LATENT_SMOOTHING_FRAMES)
    series = np.convolve(raw, kernel, mode="valid")
    series -= series.mean()
    return series / np.linalg.norm(series)


def _generating_atoms(spec: PhantomSpec, latent_seed):
    task, latent = [], []
    for com in spec.communities:
        for atom, _ in com.atoms:
            bucket = latent if atom.startswith(LATENT_PREFIX) else task
            if atom not in bucket:
                bucket.append(atom)
    task.sort(key=spec.paradigm.names.index)
    columns = []
    for name in task:
        reg = stimulus_regressor(spec.paradigm, name, spec.n_frames, spec.tr, spec.hrf)
        norm = np.linalg.norm(reg)
        if norm == 0:
            raise ValidationError(f"condition {name!r} has an all-zero regressor")
        columns.append(reg / norm)
    streams = latent_seed.spawn(len(latent))
    for stream in streams:
        columns.append(smooth_latent(np.random.default_rng(stream), spec.n_frames))
    labels = tuple(task + latent)
    return Dictionary(np.column_stack(columns), len(task), labels)


def _regions(spec: PhantomSpec, community_names):
    seeds, targets, high, low = [], [], [], []
    size = spec.region_size
    regioned = [
        com
        for com in spec.communities
        if any(not a.startswith(LATENT_PREFIX) for a, _ in com.atoms)
        and com.stop - com.start >= 3 * size
    ]
    for com in regioned:
        base = com.start
        seeds.append(RegionSpec(f"{com.name}_seed", tuple(range(base, base + size))))
        for t in (1, 2):
            lo = base + t * size
            targets.append(RegionSpec(f"{com.name}_t{t}", tuple(range(lo, lo + size))))
    for seed in seeds:
        seed_com = seed.name[: -len("_seed")]
        for target in targets:
            pair = (seed.name, target.name)
            (high if target.name.rsplit("_t", 1)[0] == seed_com else low).append(pair)
    return seeds, targets, high, low


def generate_phantom(spec: PhantomSpec) -> PhantomTruth:
    """Build clean/noisy matrices and the exact ground truth behind them."""
    if spec.paradigm is None:
        raise ValidationError("phantom needs a paradigm")
    root = np.random.SeedSequence(spec.rng_seed)
    latent_seed, noise_seed, drift_seed, spike_seed = root.spawn(4)
    dictionary = _generating_atoms(spec, latent_seed)
    index = {label: j for j, label in enumerate(dictionary.atom_labels)}

    coeffs = np.zeros((dictionary.size, spec.n_voxels))
    community = np.full(spec.n_voxels, -1, dtype=np.int64)
    for c, com in enumerate(spec.communities):
        community[com.start : com.stop] = c
        for atom, amp in com.atoms:
            coeffs[index[atom], com.start : com.stop] += amp
    bound = max(1, int(np.count_nonzero(coeffs, axis=0).max()))
    truth_coeffs = CoefficientMatrix(coeffs, bound)
    clean = dictionary.atoms @ coeffs

    noise = np.zeros_like(clean)
    if spec.noise_sigma > 0:
        # one child stream per voxel block keeps blocks independent of scheduling
        n_blocks = -(-spec.n_voxels // NOISE_BLOCK_VOXELS)
        for b, stream in enumerate(noise_seed.spawn(n_blocks)):
            lo = b * NOISE_BLOCK_VOXELS
            hi = min(lo + NOISE_BLOCK_VOXELS, spec.n_voxels)
            noise[:, lo:hi] = spec.noise_sigma * np.random.default_rng(stream).standard_normal(
                (spec.n_frames, hi - lo)
            )
        if spec.drift_order > 0:
            rng = np.random.default_rng(drift_seed)
            t = np.linspace(-1.0, 1.0, spec.n_frames)
            basis = legendre.legvander(t, spec.drift_order)[:, 1:]
            weights = rng.standard_normal((spec.drift_order, spec.n_voxels))
            noise += spec.drift_scale * spec.noise_sigma * basis @ weights
        if spec.spike_rate > 0:
            rng = np.random.default_rng(spike_seed)
            hits = rng.random(clean.shape) < spec.spike_rate
            signs = rng.choice([-1.0, 1.0], size=clean.shape)
            noise += hits * signs * spec.spike_scale * spec.noise_sigma

    seeds, targets, high, low = _regions(spec, [c.name for c in spec.communities])
    return PhantomTruth(
        clean=SignalMatrix(clean, spec.tr),
        noisy=SignalMatrix(clean + noise, spec.tr),
        true_dictionary=dictionary,
        true_coefficients=truth_coeffs,
        community_of_voxel=community,
        community_names=tuple(c.name for c in spec.communities),
        seeds=seeds,
        targets=targets,
        expected_high_pairs=high,
        expected_low_pairs=low,
    )


def snr_db(clean: SignalMatrix, noisy: SignalMatrix) -> float:
    """``10 log10(||clean||^2 / ||noisy - clean||^2)``; ``inf`` when noisy equals clean."""
    a = clean.data if isinstance(clean, SignalMatrix) else np.asarray(clean, float)
    b = noisy.data if isinstance(noisy, SignalMatrix) else np.asarray(noisy, float)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    noise = float(np.sum((b - a) ** 2))
    if noise == 0.0:
        return math.inf
    signal = float(np.sum(a * a))
    if signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal / noise)


def sigma_for_snr(spec: PhantomSpec, target_db: float) -> float:
    """Noise sigma whose expected energy puts the phantom at ``target_db``."""
    clean = generate_phantom(replace(spec, noise_sigma=0.0)).clean.data
    energy = float(np.sum(clean * clean))
    return math.sqrt(energy / (clean.size * 10.0 ** (target_db / 10.0)))


def default_phantom_spec(
    rng_seed: int = 0,
    snr_db_target: float | None = -3.0,
    n_frames: int = MOTOR_FRAMES,
    tr: float = MOTOR_TR,
    n_voxels: int = 2000,
    task_community_size: int = 150,
    rest_community_size: int = 100,
    task_amplitude: float = 1.0,
    latent_amplitude: float = 0.7,
    noise_sigma: float = 0.0,
    drift_order: int = 0,
    spike_rate: float = 0.0,
    region_size: int = 1,
    paradigm: TaskParadigm | None = None,
) -> PhantomSpec:
    """Desk-scale stand-in for a motor-task run.

    One task community per paradigm condition, driven by that condition's
    regressor plus its own latent; one resting community per condition
    carrying the same latent alone; the remaining voxels are pure noise.
    ``snr_db_target`` (when not None) overrides ``noise_sigma``.
    """
    paradigm = paradigm or default_motor_paradigm()
    communities = []
    pos = 0
    for name in paradigm.names:
        atoms = ((name, task_amplitude), (f"{LATENT_PREFIX}{name}", latent_amplitude))
        communities.append(Community(name, pos, pos + task_community_size, atoms))
        pos += task_community_size
    for name in paradigm.names:
        atoms = ((f"{LATENT_PREFIX}{name}", latent_amplitude),)
        communities.append(Community(f"rest_{name}", pos, pos + rest_community_size, atoms))
        pos += rest_community_size
    if pos > n_voxels:
        raise ValidationError(f"communities need {pos} voxels but n_voxels = {n_voxels}")
    spec = PhantomSpec(
        n_frames=n_frames,
        tr=tr,
        paradigm=paradigm,
        n_voxels=n_voxels,
        communities=tuple(communities),
        noise_sigma=noise_sigma,
        drift_order=drift_order,
        spike_rate=spike_rate,
        region_size=region_size,
        rng_seed=rng_seed,
    )
    if snr_db_target is not None:
        spec = replace(spec, noise_sigma=sigma_for_snr(spec, snr_db_target))
    return spec
