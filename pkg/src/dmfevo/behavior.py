"""Behavioral prediction: ridge regression, cross-validated R-squared,
permutation-calibrated p-values and Benjamini-Hochberg FDR.

Features are per-subject parameter summaries: either one network's
20-value block or the element-wise average of the seven blocks. Columns
are standardized (constant columns become zero); R-squared is computed on
pooled out-of-fold predictions with standardization fit on training folds
only. Permutation p-values use add-one smoothing, so they are never zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .connectome import RSN_INDEX, RSN_LABELS
from .dmf import N_PARAMS
from .rng import RngStream

FEATURE_PER_RSN = "per_rsn"
FEATURE_RSN_AVERAGE = "rsn_average"

_LBL_FOLDS = 0x464F4C44   # "FOLD"
_LBL_PERM = 0x5045524D    # "PERM"


@dataclass(frozen=True)
class FeatureMatrix:
    """Standardized subjects-by-20 feature block."""

    X: np.ndarray
    feature_mode: str
    rsn: str | None
    column_mean: np.ndarray
    column_sd: np.ndarray


def extract_features(vectors: np.ndarray, feature_mode: str,
                     rsn: str | None = None) -> np.ndarray:
    """Per-subject 20-value features from decoded parameter vectors.

    `vectors` is (n_subjects, 20) or (n_subjects, 140). A 20-column input
    is its own feature block for every mode (the homogeneous model carries
    one shared block). For 140-column inputs, per_rsn picks the named
    network's block and rsn_average averages the seven blocks element-wise.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2:
        raise ValueError("vectors must be 2-d")
    if vectors.shape[1] == N_PARAMS:
        return vectors.copy()
    if vectors.shape[1] != 7 * N_PARAMS:
        raise ValueError(f"vectors must have 20 or 140 columns, "
                         f"got {vectors.shape[1]}")
    blocks = vectors.reshape(vectors.shape[0], 7, N_PARAMS)
    if feature_mode == FEATURE_RSN_AVERAGE:
        return blocks.mean(axis=1)
    if feature_mode == FEATURE_PER_RSN:
        if rsn not in RSN_INDEX:
            raise ValueError(f"unknown RSN {rsn!r}")
        return blocks[:, RSN_INDEX[rsn], :].copy()
    raise ValueError(f"unknown feature mode {feature_mode!r}")


def standardize_columns(X: np.ndarray):
    """Zero-mean unit-sd columns; constant columns are set to zero."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    out = np.zeros_like(X)
    ok = sd > 0
    out[:, ok] = (X[:, ok] - mean[ok]) / sd[ok]
    return out, mean, sd


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float):
    """Ridge weights on standardized X; intercept is mean(y).

    Solves (X'X + lam*I) w = X'(y - ybar) via a symmetric positive-definite
    factorization. lam = 0 with rank-deficient X is rejected.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X and y must agree on the sample count")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    intercept = float(y.mean())
    yc = y - intercept
    d = X.shape[1]
    gram = X.T @ X + lam * np.eye(d)
    if lam == 0.0 and np.linalg.matrix_rank(X) < d:
        raise np.linalg.LinAlgError(
            "X'X is singular at lambda=0; use lambda > 0")
    weights = scipy.linalg.solve(gram, X.T @ yc, assume_a="pos")
    return weights, intercept


def r_squared(y: np.ndarray, yhat: np.ndarray) -> float:
    """1 - SSE/SST against the mean baseline; may be negative."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("y and yhat must be equal-length vectors, n >= 2")
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 0:
        raise ValueError("y has zero variance")
    sse = float(((y - yhat) ** 2).sum())
    return 1.0 - sse / sst


def _fold_assignment(n: int, k_folds: int, stream: RngStream) -> list:
    perm = stream.permutation(n)
    sizes = [n // k_folds + (1 if i < n % k_folds else 0)
             for i in range(k_folds)]
    folds = []
    start = 0
    for size in sizes:
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return folds


def cv_r2(X: np.ndarray, y: np.ndarray, lam: float, k_folds: int,
          seed) -> float:
    """Out-of-fold pooled R-squared with seeded fold assignment.

    Standardization statistics come from the training folds only; the
    pooled predictions are scored against the full-sample mean baseline.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if n < k_folds:
        raise ValueError("need at least one sample per fold")
    stream = seed if isinstance(seed, RngStream) else RngStream.from_seed(seed)
    folds = _fold_assignment(n, k_folds, stream.derive(_LBL_FOLDS))
    yhat = np.empty(n)
    for fold in folds:
        train = np.setdiff1d(np.arange(n), fold)
        Xtr, mean, sd = standardize_columns(X[train])
        w, b = ridge_fit(Xtr, y[train], lam)
        Xte = np.zeros((len(fold), X.shape[1]))
        ok = sd > 0
        Xte[:, ok] = (X[fold][:, ok] - mean[ok]) / sd[ok]
        yhat[fold] = Xte @ w + b
    return r_squared(y, yhat)


def in_sample_r2(X: np.ndarray, y: np.ndarray, lam: float) -> float:
    Xs, _, _ = standardize_columns(X)
    w, b = ridge_fit(Xs, np.asarray(y, dtype=float), lam)
    return r_squared(np.asarray(y, dtype=float), Xs @ w + b)


def permutation_test(X: np.ndarray, y: np.ndarray, lam: float, n_perm: int,
                     seed, k_folds: int = 5):
    """Permutation-calibrated cross-validated R-squared.

    Returns (r2_true, p_value, null_samples) where
    p = (1 + #{null >= true}) / (1 + n_perm).
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    y = np.asarray(y, dtype=float)
    stream = seed if isinstance(seed, RngStream) else RngStream.from_seed(seed)
    fold_seed = stream.derive(_LBL_FOLDS)
    r2_true = cv_r2(X, y, lam, k_folds, fold_seed)
    null = np.empty(n_perm)
    for i in range(n_perm):
        pstream = stream.derive(_LBL_PERM).derive(i)
        y_perm = y[pstream.permutation(len(y))]
        null[i] = cv_r2(X, y_perm, lam, k_folds, fold_seed)
    p = (1.0 + float((null >= r2_true).sum())) / (1.0 + n_perm)
    return r2_true, p, null


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up q-values, in the input order."""
    p = np.asarray(list(p_values), dtype=float)
    if p.size == 0:
        return p
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    q = np.empty(m)
    running = 1.0
    for rank in range(m, 0, -1):
        i = order[rank - 1]
        running = min(running, p[i] * m / rank)
        q[i] = running
    return q
