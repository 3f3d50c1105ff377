"""Dynamic mean field forward dynamics.

Each cortical region is a coupled excitatory-inhibitory pair of synaptic
gating variables (S_E, S_I). The drift, with all times in milliseconds and
firing rates in Hz (converted by the 1e-3 rate scale), is

    dS_E,i/dt = -S_E,i/tau_E + (1 - S_E,i) * gamma   * H(I_i)   * 1e-3
    dS_I,i/dt = -S_I,i/tau_I +               gamma_I * H(I_I,i) * 1e-3

    I_i   = I_b + W_E*J*w_EE*S_E,i - J*w_EI*S_I,i + g*J*sum_j SC_ij S_E,j
    I_I,i =       W_I*J*w_IE*S_E,i - J*w_II*S_I,i

with the firing-rate transfer H(x) = x / (1 - exp(-d*x)), x = a*I - b,
defined by continuity as 1/d at x = 0.

Twenty parameters per region are optimized; in the heterogeneous mode each
of the seven resting-state networks carries an independent copy of the
block, in the homogeneous mode one block is shared brain-wide.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable

import numpy as np

from . import _kernels
from .connectome import Parcellation, RSN_LABELS, StructuralConnectome
from .rng import RngStream

PARAM_NAMES = (
    "a_E", "b_E", "d_E", "W_E", "tau_E",
    "a_I", "b_I", "d_I", "W_I", "tau_I",
    "w_EE", "w_EI", "w_IE", "w_II",
    "I_b", "J", "gamma", "gamma_I", "sigma", "g",
)

PARAM_INDEX = {name: i for i, name in enumerate(PARAM_NAMES)}

N_PARAMS = 20

# default value and [lo, hi] search range per parameter, canonical order
_PARAM_TABLE = {
    "a_E": (310.0, 200.0, 400.0),
    "b_E": (125.0, 100.0, 150.0),
    "d_E": (0.16, 0.1, 0.3),
    "W_E": (1.0, 0.5, 2.0),
    "tau_E": (100.0, 50.0, 200.0),
    "a_I": (615.0, 400.0, 800.0),
    "b_I": (177.0, 150.0, 220.0),
    "d_I": (0.087, 0.05, 0.15),
    "W_I": (0.7, 0.3, 1.5),
    "tau_I": (10.0, 5.0, 20.0),
    "w_EE": (1.4, 0.5, 2.5),
    "w_EI": (1.0, 0.5, 2.0),
    "w_IE": (1.0, 0.5, 2.0),
    "w_II": (0.5, 0.1, 1.5),
    "I_b": (0.382, 0.2, 0.6),
    "J": (0.15, 0.05, 0.3),
    "gamma": (0.641, 0.3, 1.0),
    "gamma_I": (1.0, 0.5, 1.5),
    "sigma": (0.01, 0.001, 0.05),
    "g": (2.5, 0.0, 5.0),
}

GENE_STEPS = 1000  # genes live in {0..999}

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"


class NoFixedPoint(Exception):
    """Damped iteration did not converge; treated downstream as instability."""


class InstabilityError(Exception):
    """A simulated state became non-finite."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


@dataclass(frozen=True)
class DmfParams:
    """One 20-parameter block in canonical order."""

    a_E: float
    b_E: float
    d_E: float
    W_E: float
    tau_E: float
    a_I: float
    b_I: float
    d_I: float
    W_I: float
    tau_I: float
    w_EE: float
    w_EI: float
    w_IE: float
    w_II: float
    I_b: float
    J: float
    gamma: float
    gamma_I: float
    sigma: float
    g: float

    def __post_init__(self):
        for name in ("tau_E", "tau_I", "d_E", "d_I"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Iterable[float]) -> "DmfParams":
        values = list(values)
        if len(values) != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} values, got {len(values)}")
        return cls(**{n: float(v) for n, v in zip(PARAM_NAMES, values)})

    def replace(self, **kw) -> "DmfParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return DmfParams(**d)


def default_params() -> DmfParams:
    return DmfParams(**{n: _PARAM_TABLE[n][0] for n in PARAM_NAMES})


@dataclass(frozen=True)
class RsnParamTable:
    """One parameter block per canonical network (7 x 20 free values)."""

    per_rsn: dict

    def __post_init__(self):
        if set(self.per_rsn) != set(RSN_LABELS):
            missing = set(RSN_LABELS) - set(self.per_rsn)
            extra = set(self.per_rsn) - set(RSN_LABELS)
            raise ValueError(f"need exactly the 7 canonical labels; "
                             f"missing={sorted(missing)} extra={sorted(extra)}")

    def to_region_array(self, parcellation: Parcellation) -> np.ndarray:
        out = np.empty((parcellation.n_regions, N_PARAMS))
        for i, label in enumerate(parcellation.rsn_of):
            out[i] = self.per_rsn[label].to_array()
        return out

    def to_vector(self) -> np.ndarray:
        """Concatenated blocks in canonical RSN order (140 values)."""
        return np.concatenate([self.per_rsn[l].to_array() for l in RSN_LABELS])

    @classmethod
    def from_vector(cls, vec: Iterable[float]) -> "RsnParamTable":
        vec = np.asarray(list(vec), dtype=float)
        if vec.shape != (7 * N_PARAMS,):
            raise ValueError(f"expected {7 * N_PARAMS} values, got {vec.shape}")
        return cls({l: DmfParams.from_array(vec[20 * r:20 * r + 20])
                    for r, l in enumerate(RSN_LABELS)})


@dataclass(frozen=True)
class ParamRanges:
    """Per-parameter affine decoding bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (N_PARAMS,) or hi.shape != (N_PARAMS,):
            raise ValueError("ranges must hold 20 bounds each")
        if not np.all(lo < hi):
            raise ValueError("every lo must be strictly below hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


def default_ranges() -> ParamRanges:
    lo = np.array([_PARAM_TABLE[n][1] for n in PARAM_NAMES])
    hi = np.array([_PARAM_TABLE[n][2] for n in PARAM_NAMES])
    return ParamRanges(lo=lo, hi=hi)


@dataclass(frozen=True)
class NeuralState:
    """Synaptic gating state; S_E in [0, 1], S_I non-negative."""

    S_E: np.ndarray
    S_I: np.ndarray

    def __post_init__(self):
        se = np.asarray(self.S_E, dtype=float)
        si = np.asarray(self.S_I, dtype=float)
        if se.shape != si.shape or se.ndim != 1:
            raise ValueError("S_E and S_I must be 1-d arrays of equal length")
        object.__setattr__(self, "S_E", se)
        object.__setattr__(self, "S_I", si)


def genome_length(mode: str) -> int:
    if mode == HOMOGENEOUS:
        return N_PARAMS
    if mode == HETEROGENEOUS:
        return 7 * N_PARAMS
    raise ValueError(f"unknown mode {mode!r}")


def mode_of_length(n_genes: int) -> str:
    if n_genes == N_PARAMS:
        return HOMOGENEOUS
    if n_genes == 7 * N_PARAMS:
        return HETEROGENEOUS
    raise ValueError(f"genome length {n_genes} is neither 20 nor 140")


def genes_to_values(genes: np.ndarray, ranges: ParamRanges) -> np.ndarray:
    """Affine map of one 20-gene block to physical values."""
    return ranges.lo + (genes / (GENE_STEPS - 1.0)) * (ranges.hi - ranges.lo)


def decode(genome, ranges: ParamRanges, mode: str,
           parcellation: Parcellation) -> np.ndarray:
    """Decode integer genes to region-wise physical parameters.

    Returns an (n_regions, 20) array; value = lo + (gene/999)*(hi - lo).
    Homogeneous genomes broadcast one block to every region; heterogeneous
    genomes assign block r (genes 20r..20r+19) to the regions labelled with
    the r-th canonical network.
    """
    genes = np.asarray(genome, dtype=np.int64)
    expected = genome_length(mode)
    if genes.shape != (expected,):
        raise ValueError(f"{mode} genome must have {expected} genes, "
                         f"got shape {genes.shape}")
    if genes.min() < 0 or genes.max() >= GENE_STEPS:
        raise ValueError("genes must lie in {0..999}")
    n = parcellation.n_regions
    if mode == HOMOGENEOUS:
        block = genes_to_values(genes, ranges)
        return np.tile(block, (n, 1))
    out = np.empty((n, N_PARAMS))
    label_idx = parcellation.label_indices()
    for r in range(7):
        block = genes_to_values(genes[20 * r:20 * r + 20], ranges)
        out[label_idx == r] = block
    return out


def region_params_from_table(truth, parcellation: Parcellation) -> np.ndarray:
    """(n_regions, 20) array from a DmfParams or RsnParamTable."""
    if isinstance(truth, DmfParams):
        return np.tile(truth.to_array(), (parcellation.n_regions, 1))
    if isinstance(truth, RsnParamTable):
        return truth.to_region_array(parcellation)
    raise TypeError(f"expected DmfParams or RsnParamTable, got {type(truth)}")


def transfer(current, a: float, b: float, d: float):
    """Firing rate H(I) in Hz; the singularity at a*I = b is removable.

    H(x) = x / (1 - exp(-d*x)) with x = a*current - b; |x| < 1e-9 returns
    the limit 1/d. Evaluated with the exp argument kept negative on both
    branches so large |x| cannot overflow.
    """
    if d <= 0.0:
        raise ValueError("d must be positive")
    x = a * np.asarray(current, dtype=float) - b
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-9
    neg = (x < 0.0) & ~small
    pos = ~neg & ~small
    out[small] = 1.0 / d
    e = np.exp(d * x[neg])
    out[neg] = x[neg] * e / (e - 1.0)
    out[pos] = x[pos] / (1.0 - np.exp(-d * x[pos]))
    return float(out[0]) if scalar else out


def _transfer_gain(x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """dH/dx with the x -> 0 limit 1/2 handled by series expansion.

    H'(x) = (1 - e^{-dx} - x d e^{-dx}) / (1 - e^{-dx})^2; for x < 0 the
    expression is rescaled by e^{2dx} so no exponential can overflow.
    """
    x = np.asarray(x, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-6
    neg = (x < 0.0) & ~small
    pos = ~neg & ~small
    out[small] = 0.5 + d[small] * x[small] / 6.0
    e = np.exp(d[neg] * x[neg])
    out[neg] = (e * e - e - x[neg] * d[neg] * e) / (e - 1.0) ** 2
    e = np.exp(-d[pos] * x[pos])
    out[pos] = (1.0 - e - x[pos] * d[pos] * e) / (1.0 - e) ** 2
    return out


def _as_param_matrix(params, parcellation: Parcellation | None = None) -> np.ndarray:
    if isinstance(params, (DmfParams, RsnParamTable)):
        if parcellation is None:
            raise ValueError("parcellation required to expand typed params")
        return region_params_from_table(params, parcellation)
    P = np.ascontiguousarray(np.asarray(params, dtype=float))
    if P.ndim != 2 or P.shape[1] != N_PARAMS:
        raise ValueError(f"region params must be (n, 20), got {P.shape}")
    return P


def drift(state: NeuralState, params, sc: StructuralConnectome) -> NeuralState:
    """Time derivative of the gating state, in 1/ms."""
    P = _as_param_matrix(params)
    se = np.ascontiguousarray(state.S_E, dtype=float)
    si = np.ascontiguousarray(state.S_I, dtype=float)
    dse = np.empty_like(se)
    dsi = np.empty_like(si)
    _kernels._drift_into(P, sc.weights, se, si, dse, dsi)
    return NeuralState(S_E=dse, S_I=dsi)


FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 50_000
FIXED_POINT_ETA = 1.0
INITIAL_GATING = 0.1


def find_fixed_point(params, sc: StructuralConnectome) -> NeuralState:
    """Damped fixed-point iteration S <- S + drift(S) from S = 0.1.

    Converges when max |dS/dt| < 1e-10; raises NoFixedPoint after 50,000
    iterations otherwise (callers map that to fitness 0).
    """
    P = _as_param_matrix(params)
    states, converged, iters = _kernels.fixed_point_batch(
        P[None], sc.weights, INITIAL_GATING, FIXED_POINT_ETA,
        FIXED_POINT_TOL, FIXED_POINT_MAX_ITER)
    if not converged[0]:
        raise NoFixedPoint(f"no convergence within {FIXED_POINT_MAX_ITER} "
                           f"iterations (stopped at {int(iters[0])})")
    return NeuralState(S_E=states[0, 0], S_I=states[0, 1])


def find_fixed_points_batch(P_batch: np.ndarray, sc: StructuralConnectome):
    """Vector form of find_fixed_point for (B, n, 20) parameter stacks.

    Returns (states (B, 2, n), converged bool (B,)). Each entry is computed
    independently, so the result for a genome never depends on what else is
    in the batch.
    """
    P_batch = np.ascontiguousarray(P_batch, dtype=float)
    states, converged, _ = _kernels.fixed_point_batch(
        P_batch, sc.weights, INITIAL_GATING, FIXED_POINT_ETA,
        FIXED_POINT_TOL, FIXED_POINT_MAX_ITER)
    return states, converged.astype(bool)


def jacobian(params, sc: StructuralConnectome, state: NeuralState) -> np.ndarray:
    """Analytic 2N x 2N Jacobian of the drift at `state`, ordered [S_E; S_I]."""
    P = _as_param_matrix(params)
    n = P.shape[0]
    se = state.S_E
    si = state.S_I
    W = sc.weights

    a_E, b_E, d_E = P[:, 0], P[:, 1], P[:, 2]
    a_I, b_I, d_I = P[:, 5], P[:, 6], P[:, 7]
    I_E = (P[:, 14] + P[:, 3] * P[:, 15] * P[:, 10] * se
           - P[:, 15] * P[:, 11] * si + P[:, 19] * P[:, 15] * (W @ se))
    I_I = P[:, 8] * P[:, 15] * P[:, 12] * se - P[:, 15] * P[:, 13] * si

    x_E = a_E * I_E - b_E
    x_I = a_I * I_I - b_I
    # firing rates and input gains at the linearization point
    H_E = np.array([_kernels.transfer_scalar(x_E[i], d_E[i]) for i in range(n)])
    gain_E = a_E * _transfer_gain(x_E, d_E)   # dH_E/dI
    gain_I = a_I * _transfer_gain(x_I, d_I)

    pre_E = (1.0 - se) * P[:, 16] * _kernels.RATE_SCALE
    pre_I = P[:, 17] * _kernels.RATE_SCALE

    A = np.zeros((2 * n, 2 * n))
    ee = (pre_E * gain_E * P[:, 19] * P[:, 15])[:, None] * W
    diag = np.arange(n)
    ee[diag, diag] += (-1.0 / P[:, 4] - P[:, 16] * H_E * _kernels.RATE_SCALE
                       + pre_E * gain_E * P[:, 3] * P[:, 15] * P[:, 10])
    A[:n, :n] = ee
    A[diag, n + diag] = pre_E * gain_E * (-P[:, 15] * P[:, 11])
    A[n + diag, diag] = pre_I * gain_I * P[:, 8] * P[:, 15] * P[:, 12]
    A[n + diag, n + diag] = (-1.0 / P[:, 9]
                             + pre_I * gain_I * (-P[:, 15] * P[:, 13]))
    return A


SAMPLE_EVERY_MS = 10.0
TRANSIENT_MS = 2000.0
_NOISE_BLOCK_STEPS = 65_536


def simulate(params, sc: StructuralConnectome, duration_ms: float,
             dt_ms: float, seed, sample_every_ms: float = SAMPLE_EVERY_MS,
             transient_ms: float = TRANSIENT_MS,
             initial_state: NeuralState | None = None):
    """Euler-Maruyama integration of the stochastic gating dynamics.

    S(t+dt) = S(t) + drift*dt + sigma*sqrt(dt)*xi with one standard normal
    per state component per step, drawn from a deterministic stream keyed
    by `seed` (an int or an RngStream). Starts from S_E = S_I = 0.1 unless
    `initial_state` overrides it, clamps S_E to [0, 1] and S_I to [0, inf),
    emits one NeuralState sample per `sample_every_ms` and discards samples
    inside the initial transient.

    Returns (times_ms, S_E samples, S_I samples) with arrays shaped
    (n_samples,), (n_samples, n), (n_samples, n).
    """
    if dt_ms <= 0:
        raise ValueError("dt_ms must be positive")
    if duration_ms < dt_ms:
        raise ValueError("duration_ms must be at least dt_ms")
    P = _as_param_matrix(params)
    n = P.shape[0]
    stream = seed if isinstance(seed, RngStream) else RngStream.from_seed(seed)

    n_steps = int(round(duration_ms / dt_ms))
    sample_times = np.arange(1, int(np.floor(duration_ms / sample_every_ms)) + 1,
                             dtype=np.int64) * sample_every_ms
    sample_times = sample_times[sample_times > transient_ms]
    # state after step s carries time (s+1)*dt; emit at the last step whose
    # time does not exceed the sample time (1e-9 guards float division)
    emit_steps = np.ceil(sample_times / dt_ms - 1e-9).astype(np.int64) - 1
    emit_steps = emit_steps[emit_steps < n_steps]

    out_se = np.empty((len(emit_steps), n))
    out_si = np.empty((len(emit_steps), n))
    if initial_state is None:
        se = np.full(n, INITIAL_GATING)
        si = np.full(n, INITIAL_GATING)
    else:
        se = np.array(initial_state.S_E, dtype=float)
        si = np.array(initial_state.S_I, dtype=float)

    done = 0
    pos = 0
    while done < n_steps:
        nb = min(_NOISE_BLOCK_STEPS, n_steps - done)
        noise = stream.normal((nb, 2, n))
        pos, bad = _kernels.euler_maruyama_block(
            P, sc.weights, se, si, noise, dt_ms, done, emit_steps, pos,
            out_se, out_si)
        if bad >= 0:
            raise InstabilityError(bad)
        done += nb
    times = (emit_steps + 1) * dt_ms
    return times, out_se, out_si
