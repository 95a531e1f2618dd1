"""Exact discrete chain of correlated pointer detectors.

One detector sits at every grid step.  Their pointers start in a jointly
correlated Gaussian whose precision is four times the kernel matrix, and the
detector at step k receives an impulsive kick that shifts its pointer by the
system's coupling observable.  Inserting the coupling eigenprojectors at
every step turns each time-ordered superoperator into a plain number along a
pair of eigenvalue histories, so all pointer Gaussian integrals can be done
analytically and the chain becomes an exact finite computation:

* averaging over every pointer gives the reduced (open-system) state as a
  double path sum with pairwise decoherence weights
  exp(-(Xa - Xb) . A (Xa - Xb) / 2);
* conditioning on read pointers multiplies each pair by a shifted-Gaussian
  likelihood ratio whose center is the symmetrized history (Xa + Xb) / 2.

Conventions fixed here and mirrored bit-for-bit by the trajectory solver:
within one step the free unitary acts first and the detector kick acts at
the step's right endpoint; windows are left-endpoint, {k : t_k < t}.

Path enumeration prunes branches whose amplitude is exactly zero (this is
what keeps commuting models O(d) wide at any depth) and refuses, rather than
truncates, when the surviving branch count would exceed the budget.

All values are immutable after construction; enumeration and pairwise
accumulation are pure, so callers may partition the history index space
across workers and merge partial Hermitian sums in any associative order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PathBudgetExceeded
from .kernels import KernelMatrix, TimeGrid
from .noise import GaussianDensity, NoiseRecord, pointer_prior
from .quantum import (
    CouplingEigensystem,
    DensityOperator,
    ModelSpec,
    eigendecompose_coupling,
    free_step,
)

DEFAULT_PATH_BUDGET = 2 ** 20

#: Pair blocks are accumulated in row chunks of this many paths to bound
#: peak memory at large path counts.
_PAIR_CHUNK = 1024


@dataclass(frozen=True)
class PathEnsemble:
    """All surviving eigenvalue histories over a window.

    ``amplitudes[p]`` is the unnormalized state vector obtained by applying,
    for each step of the window, the free unitary followed by the projector
    selected by history p.  Summing amplitudes over histories recovers the
    freely evolved state (projector completeness).
    """

    window: range
    histories: np.ndarray       # (paths, steps) int8 indices into eigenvalues
    amplitudes: np.ndarray      # (paths, dim) complex
    eigenvalues: np.ndarray     # (levels,) distinct coupling eigenvalues
    eigenvalue_sequences: np.ndarray  # (paths, steps) float

    @property
    def count(self) -> int:
        return self.amplitudes.shape[0]


@dataclass(frozen=True)
class ConditionalState:
    """Post-readout state with the log readout density of its record."""

    rho: DensityOperator
    log_weight: float
    schedule: str
    window: range


@dataclass(frozen=True)
class SingleDetector:
    """One Gaussian pointer: center and width of the initial density."""

    sigma: float
    center: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")


def build_paths(model: ModelSpec, grid: TimeGrid, window: range,
                path_budget: int = DEFAULT_PATH_BUDGET,
                eigensystem: CouplingEigensystem | None = None) -> PathEnsemble:
    """Enumerate eigenvalue histories with their vector amplitudes.

    Raises PathBudgetExceeded when the number of surviving branches would
    pass ``path_budget``; exact zero-amplitude branches are dropped, so
    commuting models stay narrow at any depth.
    """
    eig = eigensystem if eigensystem is not None else eigendecompose_coupling(model)
    U = free_step(model, grid.epsilon)
    m = eig.count
    n = len(window)
    amps = model.initial_state[None, :].astype(complex)
    hist = np.zeros((1, 0), dtype=np.int8)
    for _ in range(n):
        if amps.shape[0] * m > path_budget:
            raise PathBudgetExceeded(
                f"{amps.shape[0]} surviving paths x {m} levels exceeds budget {path_budget}; "
                "reduce the step count or Hilbert dimension, or raise the budget")
        evolved = amps @ U.T
        branches = np.stack([evolved @ eig.projectors[a].T for a in range(m)], axis=1)
        new_amps = branches.reshape(-1, model.dim)
        new_hist = np.concatenate(
            [np.repeat(hist, m, axis=0),
             np.tile(np.arange(m, dtype=np.int8), amps.shape[0])[:, None]], axis=1)
        alive = np.einsum("pi,pi->p", new_amps, new_amps.conj()).real > 0.0
        amps = new_amps[alive]
        hist = new_hist[alive]
    return PathEnsemble(window=window, histories=hist, amplitudes=amps,
                        eigenvalues=eig.eigenvalues,
                        eigenvalue_sequences=eig.eigenvalues[hist.astype(int)].reshape(hist.shape))


def _pair_accumulate(amps: np.ndarray, path_log: np.ndarray, pair_mat: np.ndarray):
    """Accumulate the pairwise sums

        num   = sum_ab exp(e_a + e_b + K_ab) |v_a><v_b|
        trace = sum_ab exp(e_a + e_b + K_ab) <v_b|v_a>

    with a global exponent shift for stability.  Returns (num, trace, shift)
    where the true values are num * exp(shift) and trace * exp(shift).
    """
    p, d = amps.shape
    shift = float(2.0 * np.max(path_log) + max(np.max(pair_mat), 0.0)) if p else 0.0
    num = np.zeros((d, d), dtype=complex)
    trace = 0.0
    for lo in range(0, p, _PAIR_CHUNK):
        hi = min(lo + _PAIR_CHUNK, p)
        W = np.exp(path_log[lo:hi, None] + path_log[None, :] + pair_mat[lo:hi, :] - shift)
        num += amps[lo:hi].T @ (W @ amps.conj())
        gram = amps[lo:hi] @ amps.conj().T
        trace += float(np.sum(W * gram).real)
    return num, trace, shift


def _decoherence_pieces(paths: PathEnsemble, A_w: np.ndarray):
    """Split -(Xa - Xb).A(Xa - Xb)/2 into per-path and cross terms."""
    Xs = paths.eigenvalue_sequences
    XA = Xs @ A_w
    quad = np.einsum("pk,pk->p", Xs, XA)
    return -0.5 * quad, XA @ Xs.T  # per-path log, cross matrix


def _conditional(paths: PathEnsemble, A_w: np.ndarray, density: GaussianDensity,
                 centers: np.ndarray, values: np.ndarray, schedule: str) -> ConditionalState:
    """Shared pairwise machinery for all conditioned states.

    ``centers[p]`` is the vector by which history p shifts the read record's
    Gaussian; pair (a, b) then carries the shifted likelihood with shift
    centers[a] + centers[b] on top of the decoherence weight.  The shift
    ratio is evaluated through the density's precision solves, keeping this
    route numerically independent of the trajectory solver's direct
    exponents.
    """
    path_log, cross = _decoherence_pieces(paths, A_w)
    if density.dim:
        u = density.precision_apply(values - density.mean)
        Z = density.precision_apply(centers.T).T
        lin = centers @ u
        self_quad = 0.5 * np.einsum("pk,pk->p", centers, Z)
        cross = cross - 0.5 * (centers @ Z.T + Z @ centers.T)
        path_log = path_log + lin - self_quad
    num, trace, shift = _pair_accumulate(paths.amplitudes, path_log, cross)
    if not trace > 0.0:
        raise ArithmeticError("conditional state has non-positive weight")
    log_weight = density.logpdf(values) + float(np.log(trace)) + shift
    rho = DensityOperator.from_matrix(num)
    return ConditionalState(rho=rho, log_weight=log_weight, schedule=schedule,
                            window=paths.window)


def reduced_state(model: ModelSpec, A: KernelMatrix, grid: TimeGrid, t: float,
                  path_budget: int = DEFAULT_PATH_BUDGET) -> DensityOperator:
    """Open-system state at time t: the pointer-averaged chain.

    Every pointer is integrated out, which cancels the Gaussian prior and
    leaves the double path sum with pairwise decoherence weights only.
    """
    window = grid.window_before(t)
    paths = build_paths(model, grid, window, path_budget)
    A_w = A.submatrix(window)
    path_log, cross = _decoherence_pieces(paths, A_w)
    num, trace, _ = _pair_accumulate(paths.amplitudes, path_log, cross)
    return DensityOperator.from_matrix(num)


def conditional_state_readout(model: ModelSpec, A: KernelMatrix, grid: TimeGrid, t: float,
                              record: NoiseRecord,
                              path_budget: int = DEFAULT_PATH_BUDGET) -> ConditionalState:
    """State conditioned on the kernel-smeared readout record over [0, t).

    The record's prior marginal has covariance equal to the window submatrix
    of A (restriction keeps the covariance), and history pair (a, b) shifts
    it by A_w (Xa + Xb).  The resulting state is pure for every record; its
    log_weight is the log readout density.
    """
    window = grid.window_before(t)
    if record.kind != "readout" or record.window != window:
        raise ValueError("expected a readout record on the window [0, t)")
    paths = build_paths(model, grid, window, path_budget)
    A_w = A.submatrix(window)
    density = GaussianDensity(window=window, mean=np.zeros(len(window)), covariance=A_w)
    centers = paths.eigenvalue_sequences @ A_w
    return _conditional(paths, A_w, density, centers, record.values, record.schedule)


def conditional_state_pointer(model: ModelSpec, A: KernelMatrix, grid: TimeGrid, t: float,
                              record: NoiseRecord,
                              path_budget: int = DEFAULT_PATH_BUDGET) -> ConditionalState:
    """State conditioned on raw pointer values read over [0, t).

    The detectors in A.window beyond the readout window stay unread but
    correlated, so the record's prior marginal carries the Schur-complement
    covariance (A^{-1}/4 restricted) and the conditioned state is generically
    mixed; it becomes pure only when those correlations vanish (memoryless
    kernels, or a window covering all of A).
    """
    window = grid.window_before(t)
    if record.kind != "pointer" or record.window != window:
        raise ValueError("expected a pointer record on the window [0, t)")
    paths = build_paths(model, grid, window, path_budget)
    A_w = A.submatrix(window)
    density = pointer_prior(A).marginal(window)
    centers = 0.5 * paths.eigenvalue_sequences
    return _conditional(paths, A_w, density, centers, record.values, record.schedule)


def delayed_state(model: ModelSpec, A: KernelMatrix, grid: TimeGrid, t: float,
                  delay: float, record: NoiseRecord,
                  path_budget: int = DEFAULT_PATH_BUDGET) -> ConditionalState:
    """State at time t when each readout is collected ``delay`` after its
    own step, so only the record on [0, t - delay) has been read.

    Equals the readout-conditioned state averaged over the still-unread
    components under the full readout density.  With delay 0 it reduces to
    conditional_state_readout; with delay t to the reduced state.
    """
    grid.steps_of(delay)  # validates that the delay sits on the grid
    if delay < 0 or delay > t:
        raise ValueError("delay must lie in [0, t]")
    window = grid.window_before(t)
    read = grid.window_before(t - delay)
    if record.kind != "readout" or record.window != read:
        raise ValueError("expected a readout record on the window [0, t - delay)")
    paths = build_paths(model, grid, window, path_budget)
    A_w = A.submatrix(window)
    density = GaussianDensity(window=read, mean=np.zeros(len(read)),
                              covariance=A.submatrix(read))
    centers = paths.eigenvalue_sequences @ A.block(read, window).T
    state = _conditional(paths, A_w, density, centers, record.values, "delayed")
    return ConditionalState(rho=state.rho, log_weight=state.log_weight,
                            schedule="delayed", window=window)


def vn_measure(detector: SingleDetector, model: ModelSpec, tau: float,
               rho0: DensityOperator, readout: float) -> tuple[DensityOperator, float]:
    """One impulsive pointer measurement of the coupling observable at time
    tau (Heisenberg picture), given the pointer's initial Gaussian.

    Returns the conditioned state and the readout probability density, a
    mixture of the pointer Gaussian centered on each eigenvalue.
    """
    eig = eigendecompose_coupling(model)
    U = free_step(model, tau)
    projectors = np.stack([U.conj().T @ P @ U for P in eig.projectors])
    x = readout - detector.center
    var = detector.sigma ** 2
    # Pointer wave-function overlaps: exp(-((x-Xa)^2 + (x-Xb)^2) / (4 var)).
    expo = -((x - eig.eigenvalues) ** 2) / (4.0 * var)
    expo = expo - np.max(expo)
    amp = np.exp(expo)
    num = np.einsum("a,b,aij,jk,bkl->il", amp, amp, projectors, rho0.matrix, projectors)
    probs = np.array([np.trace(P @ rho0.matrix).real for P in projectors])
    density = float(np.sum(probs * np.exp(-((x - eig.eigenvalues) ** 2) / (2.0 * var)))
                    / np.sqrt(2.0 * np.pi * var))
    return DensityOperator.from_matrix(num), density


def pointer_width_for(A: KernelMatrix) -> float:
    """Width of the equivalent single detector for a one-step window."""
    if A.size != 1:
        raise ValueError("pointer width shortcut requires a one-step window")
    return float(0.5 / np.sqrt(A.entries[0, 0]))
