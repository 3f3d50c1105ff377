"""Whole-brain dynamic mean field models fitted with curriculum-driven
elitist genetic algorithms, plus cross-subject generalization and
behavioral prediction statistics."""

from .connectome import (Cohort, Parcellation, RSN_LABELS,
                         StructuralConnectome, SubjectRecord, load_cohort,
                         load_matrix, load_parcellation, save_matrix,
                         synth_cohort)
from .curriculum import (Phase, Schedule, STRATEGIES, broadcast_global_block,
                         build_schedule)
from .dmf import (DmfParams, NeuralState, ParamRanges, RsnParamTable, decode,
                  default_params, default_ranges, drift, find_fixed_point,
                  jacobian, simulate, transfer)
from .evolution import (GaConfig, GenerationRecord, evolve, mutate,
                        tournament_select, uniform_crossover)
from .fitness import (FitnessReport, MomentsEvaluator, SimConfig, compute_fc,
                      fc_fitness, moments_fitness, moments_fitness_from_params,
                      simulation_fitness, simulation_fitness_from_params,
                      solve_lyapunov)
from .generalization import LooResult, loo_evaluate, trimmed_mean
from .hemodynamics import HemoConstants, bold_transform
from .rng import RngStream

__version__ = "0.1.0"
