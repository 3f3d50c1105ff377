"""Parcellations, connectivity matrices, subjects and the synthetic cohort.

File formats
------------
Parcellation CSV: one row per region, ``region_index,rsn_label`` with
0-based contiguous indices and the seven canonical network names.
Matrix CSV: N rows of N comma-separated decimal reals, no header.
Cohort manifest: JSON ``{parcellation_path, subjects: [{id, sc_path,
fc_path, behavior: {name: value}}]}`` with paths relative to the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RngStream

RSN_LABELS = (
    "Visual",
    "Somatomotor",
    "DorsalAttention",
    "VentralAttention",
    "Limbic",
    "Frontoparietal",
    "DefaultMode",
)

RSN_INDEX = {label: i for i, label in enumerate(RSN_LABELS)}


@dataclass(frozen=True)
class Parcellation:
    """Region count plus the network label of every region."""

    n_regions: int
    rsn_of: tuple
    gradient_rank: tuple | None = None

    def __post_init__(self):
        if self.n_regions <= 0:
            raise ValueError("n_regions must be positive")
        labels = tuple(self.rsn_of)
        if len(labels) != self.n_regions:
            raise ValueError("rsn_of must list one label per region")
        unknown = sorted(set(labels) - set(RSN_LABELS))
        if unknown:
            raise ValueError(f"unknown RSN labels: {unknown}")
        missing = sorted(set(RSN_LABELS) - set(labels))
        if missing:
            raise ValueError(f"every canonical network needs at least one "
                             f"region; missing: {missing}")
        object.__setattr__(self, "rsn_of", labels)
        if self.gradient_rank is not None:
            rank = tuple(int(r) for r in self.gradient_rank)
            if len(rank) != self.n_regions:
                raise ValueError("gradient_rank must cover every region")
            object.__setattr__(self, "gradient_rank", rank)

    def label_indices(self) -> np.ndarray:
        """Canonical label index (0..6) per region."""
        return np.array([RSN_INDEX[l] for l in self.rsn_of], dtype=np.int64)

    def regions_of(self, label: str) -> np.ndarray:
        return np.array([i for i, l in enumerate(self.rsn_of) if l == label],
                        dtype=np.int64)


@dataclass(frozen=True)
class StructuralConnectome:
    """Non-negative coupling weights plus conduction delays (ms)."""

    weights: np.ndarray
    delays: np.ndarray | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=float))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must be a square matrix")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if np.any(np.diag(w) != 0.0):
            raise ValueError("weights must have a zero diagonal")
        object.__setattr__(self, "weights", w)
        d = self.delays
        if d is None:
            d = np.zeros_like(w)
        else:
            d = np.asarray(d, dtype=float)
            if d.shape != w.shape:
                raise ValueError("delays must match weights in shape")
            if not np.all(np.isfinite(d)) or np.any(d < 0):
                raise ValueError("delays must be finite and non-negative")
        object.__setattr__(self, "delays", d)

    @property
    def n_regions(self) -> int:
        return self.weights.shape[0]

    def has_delays(self) -> bool:
        return bool(np.any(self.delays != 0.0))


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: structural input, empirical FC target, behavior map."""

    id: str
    sc: StructuralConnectome
    fc_empirical: np.ndarray
    behavior: dict = field(default_factory=dict)

    def __post_init__(self):
        fc = np.asarray(self.fc_empirical, dtype=float)
        n = self.sc.n_regions
        if fc.shape != (n, n):
            raise ValueError(f"fc_empirical must be {n}x{n}, got {fc.shape}")
        if not np.allclose(fc, fc.T, atol=1e-9, rtol=0.0):
            raise ValueError("fc_empirical must be symmetric within 1e-9")
        if not np.allclose(np.diag(fc), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError("fc_empirical must have a unit diagonal")
        off = fc[~np.eye(n, dtype=bool)]
        if np.any(off < -1.0 - 1e-12) or np.any(off > 1.0 + 1e-12):
            raise ValueError("fc_empirical entries must lie in [-1, 1]")
        object.__setattr__(self, "fc_empirical", fc)
        object.__setattr__(self, "behavior", dict(self.behavior))


@dataclass(frozen=True)
class Cohort:
    parcellation: Parcellation
    subjects: tuple

    def __post_init__(self):
        subjects = tuple(self.subjects)
        n = self.parcellation.n_regions
        for s in subjects:
            if s.sc.n_regions != n:
                raise ValueError(f"subject {s.id} has {s.sc.n_regions} "
                                 f"regions, parcellation has {n}")
        object.__setattr__(self, "subjects", subjects)

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(subject_id)


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def load_parcellation(path) -> Parcellation:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"parcellation file not found: {path}")
    rows = []
    for ln, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{ln + 1}: expected 'index,label'")
        rows.append((int(parts[0]), parts[1].strip()))
    rows.sort()
    indices = [r[0] for r in rows]
    if indices != list(range(len(rows))):
        raise ValueError(f"{path}: region indices must be 0-based and "
                         f"contiguous")
    return Parcellation(n_regions=len(rows), rsn_of=tuple(r[1] for r in rows))


def save_parcellation(parcellation: Parcellation, path) -> None:
    lines = [f"{i},{label}" for i, label in enumerate(parcellation.rsn_of)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path, n: int) -> np.ndarray:
    """Read an n x n CSV of finite reals, row-major, no transformation."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    rows = []
    for ln, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise ValueError(f"{path}:{ln + 1}: non-numeric cell") from exc
        rows.append(row)
    if rows and any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: ragged rows")
    mat = np.array(rows, dtype=float) if rows else np.empty((0, 0))
    if mat.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n}, got "
                         f"{mat.shape[0]}x{mat.shape[1] if mat.ndim == 2 else 0}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{path}: matrix contains non-finite values")
    return mat


def save_matrix(mat: np.ndarray, path) -> None:
    """Write a matrix CSV at full float64 round-trip precision."""
    np.savetxt(path, np.asarray(mat, dtype=float), fmt="%.17g", delimiter=",")


def load_cohort(manifest_path) -> Cohort:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    parcellation = load_parcellation(base / manifest["parcellation_path"])
    n = parcellation.n_regions
    subjects = []
    for entry in manifest["subjects"]:
        sc = StructuralConnectome(weights=load_matrix(base / entry["sc_path"], n))
        fc = load_matrix(base / entry["fc_path"], n)
        subjects.append(SubjectRecord(id=entry["id"], sc=sc, fc_empirical=fc,
                                      behavior=entry.get("behavior", {})))
    return Cohort(parcellation=parcellation, subjects=tuple(subjects))


# ---------------------------------------------------------------------------
# synthetic cohort generation
# ---------------------------------------------------------------------------

# weight distribution of the modular graph: heavy-tailed lognormal, so row
# mass concentrates on few links and near-critical dynamics carry visible
# pairwise structure (desk-scale stand-in for tractography connectomes)
_LOGNORMAL_SIGMA = 2.2
_WITHIN_RSN_FACTOR = 3.0

_LBL_BASE_SC, _LBL_SUBJECT, _LBL_BEHAVIOR, _LBL_ATTEMPT = 1, 2, 3, 4


def contiguous_parcellation(n_regions: int, regions_per_rsn: int) -> Parcellation:
    if n_regions != 7 * regions_per_rsn:
        raise ValueError(f"n_regions must equal 7*regions_per_rsn "
                         f"({n_regions} != 7*{regions_per_rsn})")
    labels = tuple(RSN_LABELS[i // regions_per_rsn] for i in range(n_regions))
    # unimodal -> transmodal position along the canonical label order
    rank = tuple(range(n_regions))
    return Parcellation(n_regions=n_regions, rsn_of=labels, gradient_rank=rank)


def _base_weights(parcellation: Parcellation, stream: RngStream) -> np.ndarray:
    n = parcellation.n_regions
    gauss = stream.normal((n, n))
    w = np.exp(_LOGNORMAL_SIGMA * gauss)
    w = np.triu(w, 1)
    w = w + w.T
    idx = parcellation.label_indices()
    same = idx[:, None] == idx[None, :]
    w *= np.where(same, _WITHIN_RSN_FACTOR, 1.0)
    np.fill_diagonal(w, 0.0)
    return w


def _subject_sc(base: np.ndarray, noise_level: float,
                stream: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed, row-normalized weights plus the perturbation field."""
    n = base.shape[0]
    eps = stream.normal((n, n))
    eps = np.triu(eps, 1)
    eps = eps + eps.T
    w = base * np.exp(noise_level * eps)
    np.fill_diagonal(w, 0.0)
    w = w / w.sum(axis=1, keepdims=True)
    return w, eps


def _rsn_exposure(weights: np.ndarray, w0: np.ndarray, noise_level: float,
                  parcellation: Parcellation) -> np.ndarray:
    """Per-network mean relative weight deviation from the unperturbed graph.

    Computed from the observable (row-normalized) weights, so the planted
    behavior signal can be recovered from the cohort files; scaled by
    1/noise_level to keep the signal size noise-level-independent.
    """
    idx = parcellation.label_indices()
    n = weights.shape[0]
    off = ~np.eye(n, dtype=bool)
    rel = np.zeros_like(weights)
    rel[off] = (weights[off] - w0[off]) / w0[off]
    out = np.empty(7)
    for r in range(7):
        rows = idx == r
        out[r] = rel[rows][off[rows]].mean()
    return out / noise_level if noise_level > 0 else out * 0.0


BEHAVIOR_TARGETS = ("planted_a", "planted_b", "random_c")
_BEHAVIOR_NOISE = (0.25, 1.0, 1.0)  # noise sd per target, planted scale is 1


def synth_cohort(n_regions: int, regions_per_rsn: int, n_subjects: int,
                 truth, noise_level: float, seed: int,
                 with_behavior: bool = True) -> Cohort:
    """Generate a synthetic cohort with model-consistent empirical FC.

    Each subject draws a symmetric modular random graph (within-network
    weight mean 3x the between-network mean, heavy-tailed positive
    entries), perturbed by multiplicative noise exp(noise_level * eps) and
    row-normalized to unit sums. The subject's empirical FC is the
    moments-based forward model of `truth` on that graph; if the forward
    model is unstable the subject is redrawn with a new sub-seed (at most
    100 attempts). Behavior targets are stated linear functions of the
    per-network perturbation exposure plus Gaussian noise, so a planted
    connectivity-to-behavior signal exists whenever noise_level > 0.
    """
    from .fitness import moments_fc_from_params  # lazy: avoids import cycle
    from .dmf import region_params_from_table

    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    if n_subjects < 1:
        raise ValueError("n_subjects must be at least 1")
    parcellation = contiguous_parcellation(n_regions, regions_per_rsn)
    root = RngStream.from_seed(seed)
    base = _base_weights(parcellation, root.derive(_LBL_BASE_SC))
    w0 = base / base.sum(axis=1, keepdims=True)  # unperturbed reference
    region_params = region_params_from_table(truth, parcellation)

    # planted behavioral coefficients, one 7-vector per planted target
    bstream = root.derive(_LBL_BEHAVIOR)
    betas = {name: bstream.normal(7) for name in BEHAVIOR_TARGETS[:2]}

    subjects = []
    for s in range(n_subjects):
        sstream = root.derive(_LBL_SUBJECT).derive(s)
        fc = None
        for attempt in range(100):
            astream = sstream.derive(_LBL_ATTEMPT).derive(attempt)
            weights, eps = _subject_sc(base, noise_level, astream)
            sc = StructuralConnectome(weights=weights)
            fc = moments_fc_from_params(region_params, sc)
            if fc is not None:
                break
        if fc is None:
            raise RuntimeError(f"forward model unstable for subject {s} "
                               f"after 100 attempts")
        behavior = {}
        if with_behavior:
            exposure = _rsn_exposure(weights, w0, noise_level, parcellation)
            noise = astream.normal(len(BEHAVIOR_TARGETS))
            for k, name in enumerate(BEHAVIOR_TARGETS):
                planted = float(betas[name] @ exposure) if name in betas else 0.0
                behavior[name] = planted + _BEHAVIOR_NOISE[k] * float(noise[k])
        subjects.append(SubjectRecord(id=f"sub{s:03d}", sc=sc,
                                      fc_empirical=fc, behavior=behavior))
    return Cohort(parcellation=parcellation, subjects=tuple(subjects))
