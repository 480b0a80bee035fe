"""Evaluation metrics: empirical return, distribution error, structure error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .factored import MAX_ENUM_STATES, DbnModel, DbnStructure, stride_matrix
from .structure import ModelBelief


@dataclass
class StepRecord:
    step: int
    action: int
    reward: float
    cum_discounted_return: float
    planning_ms: float
    dist_error: float | None = None
    struct_error: float | None = None
    log_likelihood: float = 0.0
    resampled: bool = False


def _particle_predictives(table, structure, states):
    """Normalized count rows of every variable at each state: ``(S, n, C)``."""
    keys = states @ stride_matrix(structure, table.space).T
    cmax = max(table.space.cards)
    out = np.zeros((len(states), table.space.n, cmax))
    for i, c in enumerate(table.counts):
        rows = c[keys[:, i]]
        out[:, i, : c.shape[1]] = rows / rows.sum(axis=1, keepdims=True)
    return out


def distribution_error(b: ModelBelief, true_model: DbnModel, limit: int = MAX_ENUM_STATES) -> float:
    """Weighted L1 gap between each particle's predictive and the true conditionals,
    summed over all states and variables."""
    states = true_model.space.enumerate(limit)
    truth = true_model.conditionals(states)
    total = 0.0
    for w, p in zip(b.weights, b.particles):
        pred = _particle_predictives(p.table, p.structure, states)
        total += w * float(np.abs(pred - truth).sum())
    return total


def distribution_error_grouped(b: ModelBelief, true_model: DbnModel) -> float:
    """Same quantity as :func:`distribution_error`, summing per variable over the
    distinct assignments of the union of particle and true parents, each
    weighted by how many full states share it."""
    space = true_model.space
    cmax = max(space.cards)
    total = 0.0
    for w, p in zip(b.weights, b.particles):
        for i in range(space.n):
            union = sorted(set(p.structure.parents[i]) | set(true_model.structure.parents[i]))
            mult = space.n_states // int(np.prod([space.cards[j] for j in union], dtype=np.int64))
            shape = tuple(space.cards[j] for j in union)
            combos = np.indices(shape).reshape(len(union), -1).T if union else np.zeros((1, 0), dtype=np.int64)
            states = np.zeros((len(combos), space.n), dtype=np.int64)
            states[:, union] = combos
            pred = _particle_predictives(p.table, p.structure, states)[:, i]
            truth = np.zeros((len(states), cmax))
            truth[:, : space.cards[i]] = true_model.conditionals(states)[:, i, : space.cards[i]]
            total += w * mult * float(np.abs(pred - truth).sum())
    return total


def structure_distance(g: DbnStructure, h: DbnStructure) -> int:
    if g.n != h.n:
        raise ArgumentError(f"structures have {g.n} and {h.n} variables")
    return int(np.abs(g.adjacency().astype(int) - h.adjacency()).sum())


def structure_error(b: ModelBelief, true_structure: DbnStructure) -> float:
    return float(sum(w * structure_distance(p.structure, true_structure) for w, p in zip(b.weights, b.particles)))


def moving_average(rewards, window: int = 50) -> np.ndarray:
    """Trailing mean over the last ``window`` rewards, or the whole prefix when shorter."""
    r = np.asarray(rewards, dtype=float)
    if window < 1:
        raise ArgumentError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, len(r) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Running ``sum_t gamma**t r_t`` after each step."""
    r = np.asarray(rewards, dtype=float)
    return np.cumsum(r * gamma ** np.arange(len(r)))


def return_accounting(records, gamma: float = 0.95, window: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """``(moving-average reward, cumulative discounted return)`` per step."""
    if not records:
        raise ArgumentError("need at least one record")
    rewards = [r.reward if isinstance(r, StepRecord) else float(r) for r in records]
    return moving_average(rewards, window), discounted_returns(rewards, gamma)
