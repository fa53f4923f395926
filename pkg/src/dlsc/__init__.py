"""Task-informed dictionary learning and sparse coding (DLSC) denoising.

Fixed atoms come from the task paradigm (HRF-convolved boxcars), learned
atoms from K-SVD on voxels weakly correlated with them; every voxel is then
OMP-coded against the union and reconstructed. Seed-based connectivity, a
temporal non-local-means baseline and a phantom generator support
before/after comparisons.
"""

__version__ = "0.1.0"

from .core import (
    CoefficientMatrix,
    Dictionary,
    DlscParams,
    SignalMatrix,
    load_signal_matrix,
    save_signal_matrix,
    validate_column_sparsity,
)
from .paradigm import (
    HrfSpec,
    TaskParadigm,
    boxcar,
    build_fixed_dictionary,
    canonical_hrf,
    default_motor_paradigm,
    stimulus_regressor,
)
from .sparse import KsvdTrace, OmpResult, ksvd_train, mutual_coherence, omp, sparse_code
from .connectivity import (
    ConnectivityReport,
    RegionSpec,
    connectivity_map,
    emphasis_profile,
    fisher_z,
    fisher_z_inv,
    group_average,
    pearson,
    region_series,
)
from .pipeline import DenoiseOutput, GridSearchReport, dlsc_denoise, grid_search, select_training_voxels
from .tnlm import TnlmParams, tnlm_denoise
from .synth import PhantomSpec, PhantomTruth, default_phantom_spec, generate_phantom, snr_db
