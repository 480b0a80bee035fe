"""Model-based Bayesian RL in factored MDPs with unknown DBN structure."""
from .dirichlet import (
    CountTable,
    StructurePrior,
    TransitionLog,
    log_marginal_likelihood,
    log_structure_prior,
    observe,
    predictive_prob,
    prior_counts,
)
from .factored import (
    DbnModel,
    DbnStructure,
    FactoredStateSpace,
    flatten,
    parent_values,
    sample_successor,
    transition_prob,
)
from .harness import ExperimentConfig, run_experiment, run_seed
from .planner import AgentModel, KnownTransition, LearnedTransition, PlannerConfig, plan, v_estimate, value_iteration
from .structure import GraphParticle, MhConfig, ModelBelief, init_particles, mh_step, resample_particles, should_resample, update_belief

__all__ = [
    "AgentModel",
    "CountTable",
    "DbnModel",
    "DbnStructure",
    "ExperimentConfig",
    "FactoredStateSpace",
    "GraphParticle",
    "KnownTransition",
    "LearnedTransition",
    "MhConfig",
    "ModelBelief",
    "PlannerConfig",
    "StructurePrior",
    "TransitionLog",
    "flatten",
    "init_particles",
    "log_marginal_likelihood",
    "log_structure_prior",
    "mh_step",
    "observe",
    "parent_values",
    "plan",
    "predictive_prob",
    "prior_counts",
    "resample_particles",
    "run_experiment",
    "run_seed",
    "sample_successor",
    "should_resample",
    "transition_prob",
    "update_belief",
    "v_estimate",
    "value_iteration",
]
