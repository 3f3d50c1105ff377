"""Fitness backends: moments-based (linearized covariance) and simulation.

Both backends score a candidate parameterization by the Pearson
correlation between the strictly-upper triangles of the empirical and
model functional connectivity matrices, in [-1, 1]. A score of 0 with
``stable=False`` is reserved for dynamical failure: no fixed point, an
unstable linearization, or degenerate variance.

The moments backend linearizes the dynamics at the fixed point, solves the
continuous Lyapunov equation A*Sigma + Sigma*A' + Q = 0 for the stationary
covariance (Q diagonal with the squared per-region noise amplitudes), and
correlates the excitatory block. The simulation backend integrates the
stochastic system, applies the hemodynamic transform and correlates the
BOLD series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .connectome import Parcellation, StructuralConnectome, SubjectRecord
from .dmf import (InstabilityError, NeuralState, NoFixedPoint,
                  ParamRanges, decode, find_fixed_point,
                  find_fixed_points_batch, jacobian, mode_of_length, simulate)
from .hemodynamics import bold_transform
from .rng import RngStream

MOMENTS = "moments"
SIMULATION = "simulation"

STABILITY_MARGIN = -1e-9
VARIANCE_FLOOR = 1e-15


class UnstableSystem(Exception):
    """The linearized system has an eigenvalue at or right of the margin."""


@dataclass(frozen=True)
class FitnessReport:
    score: float
    backend: str
    stable: bool
    detail: str | None = None

    def __post_init__(self):
        if not self.stable and self.score != 0.0:
            raise ValueError("unstable reports must carry score 0")
        if not -1.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [-1, 1]")


def compute_fc(series: np.ndarray) -> np.ndarray:
    """Pairwise Pearson correlations of a (time, regions) series.

    Columns with variance below 1e-15 correlate 0 with everything while
    keeping a unit diagonal.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[0] < 3:
        raise ValueError("need at least 3 time samples")
    x = series - series.mean(axis=0)
    var = (x * x).mean(axis=0)
    good = var >= VARIANCE_FLOOR
    n = series.shape[1]
    fc = np.zeros((n, n))
    if good.any():
        xs = x[:, good]
        norm = np.sqrt((xs * xs).sum(axis=0))
        c = (xs.T @ xs) / np.outer(norm, norm)
        fc[np.ix_(good, good)] = np.clip(c, -1.0, 1.0)
    np.fill_diagonal(fc, 1.0)
    return fc


def covariance_to_correlation(cov: np.ndarray) -> np.ndarray | None:
    """Correlation matrix from a covariance; None on degenerate variance."""
    d = np.diag(cov).copy()
    if np.any(d < VARIANCE_FLOOR):
        return None
    sd = np.sqrt(d)
    fc = cov / np.outer(sd, sd)
    fc = np.clip((fc + fc.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(fc, 1.0)
    return fc


def upper_triangle(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    return mat[np.triu_indices(n, k=1)]


def _fc_fitness_detail(fc_emp, fc_model):
    a = upper_triangle(np.asarray(fc_emp, dtype=float))
    b = upper_triangle(np.asarray(fc_model, dtype=float))
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a)
    vb = float(b @ b)
    if va <= VARIANCE_FLOOR * len(a) or vb <= VARIANCE_FLOOR * len(b):
        return 0.0, "degenerate_variance"
    r = float(a @ b / np.sqrt(va * vb))
    # rounding can push the quotient an ulp past +-1
    return min(max(r, -1.0), 1.0), None


def fc_fitness(fc_emp: np.ndarray, fc_model: np.ndarray) -> float:
    """Pearson correlation of the strictly-upper FC triangles.

    Equals one minus the optimization loss; 0 when either triangle has no
    variance.
    """
    fc_emp = np.asarray(fc_emp, dtype=float)
    fc_model = np.asarray(fc_model, dtype=float)
    if fc_emp.shape != fc_model.shape:
        raise ValueError("FC matrices must share a shape")
    if fc_emp.shape[0] < 3:
        raise ValueError("need at least 3 regions")
    score, _ = _fc_fitness_detail(fc_emp, fc_model)
    return score


# ---------------------------------------------------------------------------
# Lyapunov solver
# ---------------------------------------------------------------------------

def _schur_stability(A: np.ndarray):
    """Real Schur form plus the largest eigenvalue real part."""
    T, Z = scipy.linalg.schur(np.asarray(A, dtype=float), output="real")
    # standardized 2x2 blocks carry Re(lambda) on the diagonal
    return T, Z, float(np.max(np.diag(T)))


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve A*Sigma + Sigma*A' + Q = 0 for a strictly stable A.

    Uses one real Schur decomposition both for the stability check and the
    triangular Sylvester solve; raises UnstableSystem when any eigenvalue
    real part reaches -1e-9.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.shape != Q.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and Q must be square matrices of equal shape")
    T, Z, max_re = _schur_stability(A)
    if max_re >= STABILITY_MARGIN:
        raise UnstableSystem(f"max eigenvalue real part {max_re:.3e} "
                             f">= {STABILITY_MARGIN:.0e}")
    Qt = Z.T @ Q @ Z
    x, scale, info = lapack.dtrsyl(T, T, -Qt, tranb="T")
    if info < 0:
        raise RuntimeError(f"dtrsyl failed with info={info}")
    sigma = Z @ (x / scale) @ Z.T
    return (sigma + sigma.T) / 2.0


def solve_lyapunov_kron(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Reference Kronecker-vectorization solve; O(n^6), small systems only."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A) + np.kron(A, eye)
    sigma = np.linalg.solve(K, -Q.reshape(-1)).reshape(n, n)
    return (sigma + sigma.T) / 2.0


# ---------------------------------------------------------------------------
# moments backend
# ---------------------------------------------------------------------------

def _noise_covariance(region_params: np.ndarray) -> np.ndarray:
    n = region_params.shape[0]
    sig2 = region_params[:, 18] ** 2
    Q = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    Q[idx, idx] = sig2
    Q[n + idx, n + idx] = sig2
    return Q


def moments_fc_from_params(region_params: np.ndarray,
                           sc: StructuralConnectome,
                           state: NeuralState | None = None) -> np.ndarray | None:
    """Model FC from the linearized stationary covariance; None if unstable."""
    if sc.has_delays():
        raise ValueError("the moments backend requires all-zero delays")
    try:
        if state is None:
            state = find_fixed_point(region_params, sc)
    except NoFixedPoint:
        return None
    A = jacobian(region_params, sc, state)
    Q = _noise_covariance(np.asarray(region_params, dtype=float))
    try:
        sigma = solve_lyapunov(A, Q)
    except UnstableSystem:
        return None
    n = sc.n_regions
    return covariance_to_correlation(sigma[:n, :n])


def moments_fitness_from_params(region_params: np.ndarray,
                                subject: SubjectRecord,
                                state: NeuralState | None = None) -> FitnessReport:
    """Moments-based fitness of explicit region parameters on one subject."""
    if subject.sc.has_delays():
        raise ValueError("the moments backend requires all-zero delays")
    try:
        if state is None:
            state = find_fixed_point(region_params, subject.sc)
    except NoFixedPoint:
        return FitnessReport(0.0, MOMENTS, False, "no_fixed_point")
    A = jacobian(region_params, subject.sc, state)
    Q = _noise_covariance(np.asarray(region_params, dtype=float))
    try:
        sigma = solve_lyapunov(A, Q)
    except UnstableSystem:
        return FitnessReport(0.0, MOMENTS, False, "unstable_system")
    n = subject.sc.n_regions
    fc_model = covariance_to_correlation(sigma[:n, :n])
    if fc_model is None:
        return FitnessReport(0.0, MOMENTS, False, "degenerate_variance")
    score, detail = _fc_fitness_detail(subject.fc_empirical, fc_model)
    if detail is not None:
        return FitnessReport(0.0, MOMENTS, False, detail)
    return FitnessReport(score, MOMENTS, True)


def moments_fitness(genome, ranges: ParamRanges, mode: str,
                    parcellation: Parcellation,
                    subject: SubjectRecord) -> FitnessReport:
    """Decode a genome and score it with the moments backend."""
    region_params = decode(genome, ranges, mode, parcellation)
    return moments_fitness_from_params(region_params, subject)


# ---------------------------------------------------------------------------
# simulation backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    duration_ms: float = 300_000.0
    dt_ms: float = 0.1
    tr_ms: float = 720.0
    seed: int = 0
    sample_every_ms: float = 10.0
    transient_ms: float = 2000.0
    # the hemodynamic states start at rest, far from their operating point;
    # the settle window is dropped before computing FC
    bold_settle_ms: float = 20_000.0


def simulation_fitness_from_params(region_params: np.ndarray,
                                   subject: SubjectRecord,
                                   sim: SimConfig) -> FitnessReport:
    """Simulated-FC fitness of explicit region parameters on one subject."""
    try:
        _, se, _ = simulate(region_params, subject.sc, sim.duration_ms,
                            sim.dt_ms, RngStream.from_seed(sim.seed),
                            sample_every_ms=sim.sample_every_ms,
                            transient_ms=sim.transient_ms)
        bold = bold_transform(se, sim.sample_every_ms, sim.tr_ms)
    except InstabilityError:
        return FitnessReport(0.0, SIMULATION, False, "instability")
    n_settle = int(np.ceil(sim.bold_settle_ms / sim.tr_ms))
    bold = bold[n_settle:]
    if bold.shape[0] < 3:
        return FitnessReport(0.0, SIMULATION, False, "too_few_samples")
    fc_model = compute_fc(bold)
    score, detail = _fc_fitness_detail(subject.fc_empirical, fc_model)
    if detail is not None:
        return FitnessReport(0.0, SIMULATION, False, detail)
    return FitnessReport(score, SIMULATION, True)


def simulation_fitness(genome, ranges: ParamRanges, mode: str,
                       parcellation: Parcellation, subject: SubjectRecord,
                       sim: SimConfig) -> FitnessReport:
    """Decode a genome and score it with the simulation backend."""
    region_params = decode(genome, ranges, mode, parcellation)
    return simulation_fitness_from_params(region_params, subject, sim)


def fitness_from_params(region_params: np.ndarray, subject: SubjectRecord,
                        backend: str, sim: SimConfig | None = None) -> FitnessReport:
    if backend == MOMENTS:
        return moments_fitness_from_params(region_params, subject)
    if backend == SIMULATION:
        return simulation_fitness_from_params(region_params, subject,
                                              sim or SimConfig())
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# batched evaluation for the genetic algorithm
# ---------------------------------------------------------------------------

class MomentsEvaluator:
    """Population evaluator with the moments backend.

    Fixed points for the whole population are solved in one compiled batch
    (each genome independently, so scores never depend on what else is in
    the batch or on thread count); the Lyapunov stage runs per genome.
    Scores are memoized by genome content across generations.
    """

    def __init__(self, subject: SubjectRecord, ranges: ParamRanges,
                 parcellation: Parcellation):
        if subject.sc.has_delays():
            raise ValueError("the moments backend requires all-zero delays")
        self.subject = subject
        self.ranges = ranges
        self.parcellation = parcellation
        self._cache: dict = {}

    def __call__(self, genomes) -> list:
        reports: list = [None] * len(genomes)
        todo = []
        for i, g in enumerate(genomes):
            key = np.asarray(g, dtype=np.int64).tobytes()
            hit = self._cache.get(key)
            if hit is not None:
                reports[i] = hit
            else:
                todo.append((i, key, g))
        if todo:
            P = np.stack([decode(g, self.ranges, mode_of_length(len(g)),
                                 self.parcellation) for _, _, g in todo])
            states, converged = find_fixed_points_batch(P, self.subject.sc)
            for k, (i, key, _) in enumerate(todo):
                if not converged[k]:
                    rep = FitnessReport(0.0, MOMENTS, False, "no_fixed_point")
                else:
                    state = NeuralState(S_E=states[k, 0], S_I=states[k, 1])
                    rep = moments_fitness_from_params(P[k], self.subject,
                                                      state=state)
                self._cache[key] = rep
                reports[i] = rep
        return reports
