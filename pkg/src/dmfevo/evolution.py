"""Elitist genetic algorithm over discretized genomes with phase masks.

Genomes are integer vectors with genes in {0..999}. Each generation the
whole population is scored (a population evaluator may batch or
parallelize; results are merged by slot, so the outcome never depends on
evaluation order), sorted by descending score with lexicographic genomes
as the tie-break, the top elite_count individuals carried forward
unchanged, and the remaining slots filled by tournament selection, uniform
crossover and masked per-gene mutation.

Every random draw comes from a stream derived as
(run seed -> generation -> slot), so a run is a pure function of its
configuration and worker count cannot change results.

At a phase boundary the population is rebased onto the incumbent best
genome: inactive genes are thereby held fixed at the best-known values for
the whole phase, and the entering phase's active blocks are re-seeded by
masked mutation of that base. The first heterogeneous phase of a staged
schedule broadcasts the best global block into all seven network slots
before rebasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curriculum import BROADCAST_GLOBAL_BLOCK, Phase, Schedule, broadcast_global_block
from .dmf import GENE_STEPS, genome_length
from .fitness import FitnessReport
from .rng import RngStream

Genome = np.ndarray  # int64 genes in {0..999}

_LBL_INIT = 0x494E4954  # "INIT"
_LBL_GEN = 0x47454E00   # "GEN"


def validate_genome(genome) -> Genome:
    genes = np.asarray(genome, dtype=np.int64)
    if genes.ndim != 1 or genes.shape[0] not in (20, 140):
        raise ValueError(f"genome must hold 20 or 140 genes, got {genes.shape}")
    if genes.min() < 0 or genes.max() >= GENE_STEPS:
        raise ValueError("genes must lie in {0..999}")
    return genes


@dataclass(frozen=True)
class GaConfig:
    pop_size: int = 100
    elite_count: int = 20
    tournament_k: int = 3
    p_mut: float = 0.1
    total_generations: int = 120
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.elite_count < self.pop_size:
            raise ValueError("need 0 < elite_count < pop_size")
        if self.tournament_k < 1:
            raise ValueError("tournament_k must be at least 1")
        if not 0.0 <= self.p_mut <= 1.0:
            raise ValueError("p_mut must lie in [0, 1]")
        if self.total_generations < 1:
            raise ValueError("total_generations must be positive")


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_score: float
    mean_score: float
    best_genome: Genome
    phase_index: int


def tournament_select(population: list, k: int, stream: RngStream) -> Genome:
    """Best of k uniform draws (with replacement); ties keep the lowest index.

    `population` is a list of (genome, score) pairs.
    """
    if not population:
        raise ValueError("population must not be empty")
    best_idx = None
    best_score = None
    for _ in range(k):
        i = stream.randint(len(population))
        s = population[i][1]
        if best_idx is None or s > best_score or (s == best_score and i < best_idx):
            best_idx = i
            best_score = s
    return population[best_idx][0]


def uniform_crossover(a: Genome, b: Genome, stream: RngStream) -> Genome:
    """Each child gene copied from either parent with probability 1/2."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("parents must have equal genome lengths")
    child = a.copy()
    for i in range(len(a)):
        if stream.uniform() >= 0.5:
            child[i] = b[i]
    return child


def mutate(genome: Genome, p_mut: float, mask: np.ndarray,
           stream: RngStream) -> Genome:
    """Resample each masked gene uniformly from {0..999} with prob p_mut."""
    genes = np.asarray(genome, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != genes.shape:
        raise ValueError("mask length must match the genome")
    out = genes.copy()
    for i in range(len(genes)):
        if mask[i] and stream.uniform() < p_mut:
            out[i] = stream.randint(GENE_STEPS)
    return out


def _as_population_evaluator(evaluate):
    """Accept either a per-genome callable or a population callable."""
    from .fitness import MomentsEvaluator
    if isinstance(evaluate, (MomentsEvaluator, _PopulationCallable)):
        return evaluate
    if getattr(evaluate, "evaluates_population", False):
        return evaluate
    return _PopulationCallable(evaluate)


class _PopulationCallable:
    def __init__(self, per_genome):
        self.per_genome = per_genome

    def __call__(self, genomes):
        out = []
        for g in genomes:
            try:
                rep = self.per_genome(g)
            except Exception:
                rep = FitnessReport(0.0, "moments", False, "evaluation_error")
            out.append(rep)
        return out


def _random_genome(length: int, stream: RngStream) -> Genome:
    return np.array([stream.randint(GENE_STEPS) for _ in range(length)],
                    dtype=np.int64)


def _sorted_indices(scores, genomes) -> list:
    return sorted(range(len(scores)),
                  key=lambda i: (-scores[i], tuple(genomes[i])))


def _rebase_population(base: Genome, phase: Phase, config: GaConfig,
                       gen_stream: RngStream) -> list:
    """Phase-entry population: the base plus masked mutations of it."""
    pop = [base.copy()]
    for slot in range(1, config.pop_size):
        pop.append(mutate(base, config.p_mut, phase.active_mask,
                          gen_stream.derive(slot)))
    return pop


def evolve(config: GaConfig, schedule: Schedule, evaluate,
           init: list | None = None):
    """Run the GA; returns (best genome, list of GenerationRecord).

    `evaluate` maps a genome (or a list of genomes) to FitnessReport(s);
    failures score 0 and never abort the run. `init` optionally replaces
    the random initial population of the first phase.
    """
    if schedule.total_generations != config.total_generations:
        raise ValueError(f"schedule covers {schedule.total_generations} "
                         f"generations, config expects "
                         f"{config.total_generations}")
    evaluator = _as_population_evaluator(evaluate)
    root = RngStream.from_seed(config.seed)

    first = schedule.phases[0]
    length = genome_length(first.mode)
    if init is not None:
        population = [validate_genome(g).copy() for g in init]
        if len(population) != config.pop_size:
            raise ValueError(f"initial population must hold pop_size="
                             f"{config.pop_size} genomes")
        if any(len(g) != length for g in population):
            raise ValueError("initial genomes must match the first phase mode")
    else:
        init_stream = root.derive(_LBL_INIT)
        population = [_random_genome(length, init_stream.derive(slot))
                      for slot in range(config.pop_size)]

    records: list[GenerationRecord] = []
    best_genome: Genome | None = None
    best_score = -np.inf

    for gen in range(config.total_generations):
        phase_idx = schedule.phase_index_of(gen)
        phase = schedule.phases[phase_idx]

        reports = evaluator(population)
        scores = [r.score for r in reports]
        order = _sorted_indices(scores, population)

        top = order[0]
        if best_genome is None or scores[top] > best_score:
            best_score = scores[top]
            best_genome = population[top].copy()
        records.append(GenerationRecord(
            generation=gen,
            best_score=float(scores[top]),
            mean_score=float(np.mean(scores)),
            best_genome=population[top].copy(),
            phase_index=phase_idx,
        ))

        if gen + 1 == config.total_generations:
            break

        next_idx = schedule.phase_index_of(gen + 1)
        gen_stream = root.derive(_LBL_GEN).derive(gen + 1)
        if next_idx != phase_idx:
            nxt = schedule.phases[next_idx]
            base = population[top].copy()
            if nxt.on_enter == BROADCAST_GLOBAL_BLOCK:
                base = broadcast_global_block(base)
            elif nxt.mode != phase.mode:
                raise ValueError("mode change without an on_enter rewrite")
            population = _rebase_population(base, nxt, config, gen_stream)
        else:
            elites = [population[i].copy() for i in order[:config.elite_count]]
            ranked = [(population[i], scores[i]) for i in order]
            children = []
            for slot in range(config.elite_count, config.pop_size):
                stream = gen_stream.derive(slot)
                p1 = tournament_select(ranked, config.tournament_k, stream)
                p2 = tournament_select(ranked, config.tournament_k, stream)
                child = uniform_crossover(p1, p2, stream)
                children.append(mutate(child, config.p_mut, phase.active_mask,
                                       stream))
            population = elites + children

    return best_genome, records


def records_to_rows(records) -> list:
    """CSV rows `generation,best_score,mean_score,phase_index`."""
    return [(r.generation, r.best_score, r.mean_score, r.phase_index)
            for r in records]
