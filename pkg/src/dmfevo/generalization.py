"""Cross-subject generalization: trimmed-mean aggregation and leave-one-out.

For each subject, the physical parameter vectors fitted on all other
subjects are aggregated coordinate-wise with a two-sided trimmed mean and
evaluated against the held-out subject's empirical FC. Aggregates that
land in dynamically unstable regions score exactly 0 (never raise), which
is the collapse signature the flat strategies show under this evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connectome import Cohort, Parcellation
from .dmf import N_PARAMS
from .fitness import MOMENTS, SimConfig, fitness_from_params


@dataclass(frozen=True)
class LooResult:
    subject_id: str
    aggregated: np.ndarray  # decoded physical parameter vector (20 or 140)
    loo_score: float
    stable: bool

    def __post_init__(self):
        if not self.stable and self.loo_score != 0.0:
            raise ValueError("unstable results must carry loo_score 0")


def trimmed_mean(vectors, p: float) -> np.ndarray:
    """Coordinate-wise two-sided trimmed mean.

    Sorts each coordinate's n values, drops floor(p*n) from each tail and
    averages the rest. p = 0 reduces to the ordinary mean.
    """
    if not 0.0 <= p < 0.5:
        raise ValueError("p must lie in [0, 0.5)")
    arr = np.asarray(list(vectors), dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need at least one vector, all of equal length")
    n = arr.shape[0]
    k = int(np.floor(p * n))
    s = np.sort(arr, axis=0)
    kept = s[k:n - k] if k > 0 else s
    return kept.mean(axis=0)


def _vector_to_region_params(vector: np.ndarray,
                             parcellation: Parcellation) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    n = parcellation.n_regions
    if vector.shape == (N_PARAMS,):
        return np.tile(vector, (n, 1))
    if vector.shape == (7 * N_PARAMS,):
        out = np.empty((n, N_PARAMS))
        idx = parcellation.label_indices()
        for r in range(7):
            out[idx == r] = vector[N_PARAMS * r:N_PARAMS * (r + 1)]
        return out
    raise ValueError(f"parameter vector must hold 20 or 140 values, "
                     f"got {vector.shape}")


def loo_evaluate(cohort: Cohort, fitted: dict, p: float = 0.1,
                 backend: str = MOMENTS,
                 sim: SimConfig | None = None) -> list:
    """Leave-one-out evaluation of trimmed-mean aggregated parameters.

    `fitted` maps subject id to a decoded physical parameter vector (all
    the same length). For each subject the aggregate over the remaining
    subjects is scored on that subject with the chosen backend; any
    dynamical failure yields loo_score 0 with stable=False.
    """
    ids = [s.id for s in cohort.subjects]
    missing = [i for i in ids if i not in fitted]
    if missing:
        raise ValueError(f"fitted vectors missing for subjects: {missing}")
    if len(ids) < 3:
        raise ValueError("leave-one-out needs at least 3 subjects")
    lengths = {np.asarray(fitted[i]).shape for i in ids}
    if len(lengths) != 1:
        raise ValueError(f"fitted vectors disagree in length: {lengths}")

    results = []
    for subject in cohort.subjects:
        others = [np.asarray(fitted[i], dtype=float)
                  for i in ids if i != subject.id]
        aggregate = trimmed_mean(others, p)
        region_params = _vector_to_region_params(aggregate,
                                                 cohort.parcellation)
        report = fitness_from_params(region_params, subject, backend, sim)
        results.append(LooResult(subject_id=subject.id, aggregated=aggregate,
                                 loo_score=report.score, stable=report.stable))
    return results
