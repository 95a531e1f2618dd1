"""Finite-step simulator for continuous quantum measurement with memory.

A chain of correlated Gaussian pointer detectors realizes the open-system
dynamics generated by a stationary memory kernel; conditioning on different
readout schedules yields the pointer-, readout-, and delayed-readout states,
and an exact path-sum trajectory solver reproduces the readout-conditioned
states one noise realization at a time.
"""

from .errors import (
    ConfigError,
    DegenerateWeights,
    NmtrajError,
    NotPositiveDefinite,
    PathBudgetExceeded,
    SingularWindow,
)
from .kernels import (
    ExponentialKernel,
    KernelMatrix,
    MarkovDeltaKernel,
    RestrictedInverse,
    TabulatedKernel,
    TimeGrid,
    build_kernel_matrix,
    cholesky_factor,
    restricted_inverse,
    window_matrix,
)
from .noise import (
    GaussianDensity,
    NoiseRecord,
    pointer_logdensity,
    pointer_prior,
    readout_logdensity,
    readout_prior,
    sample_pointer_prior,
    sample_readout_prior,
    shift_argument,
)
from .quantum import (
    CouplingEigensystem,
    DensityOperator,
    ModelSpec,
    default_qubit,
    dephasing_qubit,
    eigendecompose_coupling,
    free_step,
    purity,
    sigma_x,
    sigma_y,
    sigma_z,
    trace_distance,
)
from .chain import (
    ConditionalState,
    PathEnsemble,
    SingleDetector,
    build_paths,
    conditional_state_pointer,
    conditional_state_readout,
    delayed_state,
    pointer_width_for,
    reduced_state,
    vn_measure,
)
from .trajectories import (
    EnsembleEstimate,
    MeanReadoutComparison,
    Trajectory,
    ensemble_average,
    mean_readout,
    readout_derivatives,
    readout_pdf,
    residual_check,
    retarded_expectation,
    solve_unnormalized,
)

__version__ = "0.1.0"
