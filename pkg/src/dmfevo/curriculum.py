"""Phase schedules for the five optimization strategies.

A schedule is an ordered list of phases; each phase fixes the genome mode
(20 or 140 genes), the boolean mask of genes the variation operators may
touch, and an optional rewrite applied when the phase is entered. The
staged strategies share an identical global first phase and release the
seven networks' parameter blocks over five further phases:

    hico     : global, {DefaultMode, Limbic}, {Frontoparietal},
               {DorsalAttention, VentralAttention}, {Visual}, {Somatomotor}
    reverse  : global, then the five block phases in reversed order
    shuffled : global, then the five block phases in seeded random order

The flat strategies have a single phase with every gene active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connectome import RSN_INDEX, RSN_LABELS
from .dmf import HETEROGENEOUS, HOMOGENEOUS, N_PARAMS, genome_length
from .rng import RngStream

STRATEGY_HOMOGENEOUS = "homogeneous"
STRATEGY_HETEROGENEOUS = "heterogeneous"
STRATEGY_HICO = "hico"
STRATEGY_REVERSE = "reverse"
STRATEGY_SHUFFLED = "shuffled"

STRATEGIES = (STRATEGY_HOMOGENEOUS, STRATEGY_HETEROGENEOUS, STRATEGY_HICO,
              STRATEGY_REVERSE, STRATEGY_SHUFFLED)

BROADCAST_GLOBAL_BLOCK = "broadcast_global_block"

# block groups released per staged phase, in hierarchy order
_STAGE_GROUPS = (
    ("DefaultMode", "Limbic"),
    ("Frontoparietal",),
    ("DorsalAttention", "VentralAttention"),
    ("Visual",),
    ("Somatomotor",),
)


@dataclass(frozen=True)
class Phase:
    name: str
    generations: int
    mode: str
    active_mask: np.ndarray
    on_enter: str | None = None

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("a phase needs at least one generation")
        mask = np.asarray(self.active_mask, dtype=bool)
        if mask.shape != (genome_length(self.mode),):
            raise ValueError("mask length must match the phase's genome mode")
        object.__setattr__(self, "active_mask", mask)


@dataclass(frozen=True)
class Schedule:
    strategy: str
    phases: tuple

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))

    @property
    def total_generations(self) -> int:
        return sum(p.generations for p in self.phases)

    def phase_index_of(self, generation: int) -> int:
        g = generation
        for i, p in enumerate(self.phases):
            if g < p.generations:
                return i
            g -= p.generations
        raise IndexError(f"generation {generation} beyond schedule")

    def phase_of(self, generation: int) -> Phase:
        return self.phases[self.phase_index_of(generation)]


def _split_budget(total: int, parts: int) -> list[int]:
    """Even split; any remainder goes to the earliest phases."""
    base, extra = divmod(total, parts)
    if base == 0:
        raise ValueError(f"{total} generations cannot cover {parts} phases")
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _block_mask(labels) -> np.ndarray:
    mask = np.zeros(7 * N_PARAMS, dtype=bool)
    for label in labels:
        r = RSN_INDEX[label]
        mask[N_PARAMS * r:N_PARAMS * (r + 1)] = True
    return mask


def build_schedule(strategy: str, total_generations: int,
                   shuffle_seed: int | None = None) -> Schedule:
    """Construct the phase schedule for a strategy.

    Staged strategies split the budget over six phases (remainder to the
    earliest); the first heterogeneous phase broadcasts the incumbent
    global block into all seven network slots. `shuffle_seed` is required
    for (and only used by) the shuffled strategy.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if total_generations < 1:
        raise ValueError("total_generations must be positive")

    if strategy == STRATEGY_HOMOGENEOUS:
        mask = np.ones(genome_length(HOMOGENEOUS), dtype=bool)
        return Schedule(strategy, (Phase("global", total_generations,
                                         HOMOGENEOUS, mask),))
    if strategy == STRATEGY_HETEROGENEOUS:
        mask = np.ones(genome_length(HETEROGENEOUS), dtype=bool)
        return Schedule(strategy, (Phase("all_blocks", total_generations,
                                         HETEROGENEOUS, mask),))

    if strategy == STRATEGY_HICO:
        groups = list(_STAGE_GROUPS)
    elif strategy == STRATEGY_REVERSE:
        groups = list(reversed(_STAGE_GROUPS))
    else:  # shuffled
        if shuffle_seed is None:
            raise ValueError("the shuffled strategy requires shuffle_seed")
        order = RngStream.from_seed(shuffle_seed).permutation(len(_STAGE_GROUPS))
        groups = [_STAGE_GROUPS[i] for i in order]

    budgets = _split_budget(total_generations, 1 + len(groups))
    phases = [Phase("global", budgets[0], HOMOGENEOUS,
                    np.ones(genome_length(HOMOGENEOUS), dtype=bool))]
    for k, group in enumerate(groups):
        phases.append(Phase("+".join(group), budgets[k + 1], HETEROGENEOUS,
                            _block_mask(group),
                            on_enter=BROADCAST_GLOBAL_BLOCK if k == 0 else None))
    return Schedule(strategy, tuple(phases))


def broadcast_global_block(genome) -> np.ndarray:
    """Copy a 20-gene block into all seven network slots (140 genes)."""
    genes = np.asarray(genome, dtype=np.int64)
    if genes.shape != (N_PARAMS,):
        raise ValueError(f"expected a 20-gene genome, got shape {genes.shape}")
    return np.tile(genes, len(RSN_LABELS))
