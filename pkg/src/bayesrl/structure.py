"""Particle filter over DBN structures with Metropolis-Hastings rejuvenation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dirichlet import (
    CountTable,
    StructurePrior,
    TransitionLog,
    family_data_counts,
    family_log_marginal,
    log_structure_prior,
    predictive_prob,
    prior_counts,
    refit,
)
from .errors import ArgumentError
from .factored import DbnStructure, FactoredStateSpace, n_parent_keys

MOVE_SETS = ("flip_symmetric_pair", "flip_single_edge")


@dataclass
class GraphParticle:
    structure: DbnStructure
    table: CountTable
    log_weight: float


@dataclass(frozen=True)
class MhConfig:
    burn_in: int = 1000
    thinning: int = 50
    move_set: str = "flip_symmetric_pair"

    def __post_init__(self):
        if self.burn_in < 0 or self.thinning < 1:
            raise ArgumentError("burn_in must be >= 0 and thinning >= 1")
        if self.move_set not in MOVE_SETS:
            raise ArgumentError(f"unknown move set {self.move_set!r}")


@dataclass
class ModelBelief:
    """Weighted graph particles for one learned action model.

    ``log_likelihood`` is ``ln L``: the summed log normalizers since the last
    (re)initialization. ``log`` holds every observed transition and is shared
    with whoever feeds the belief.
    """

    particles: list[GraphParticle]
    space: FactoredStateSpace
    log: TransitionLog
    prior: StructurePrior = field(default_factory=StructurePrior)
    resample_threshold: float = -math.inf
    ess: float = 1.0
    log_likelihood: float = 0.0

    @property
    def K(self) -> int:
        return len(self.particles)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([p.log_weight for p in self.particles])

    @property
    def weights(self) -> np.ndarray:
        lw = self.log_weights
        w = np.exp(lw - lw.max())
        return w / w.sum()

    def map_particle(self) -> GraphParticle:
        # np.argmax returns the first maximum, so ties go to the lowest index.
        return self.particles[int(np.argmax(self.log_weights))]


def fixed_belief(
    structure: DbnStructure,
    space: FactoredStateSpace,
    log: TransitionLog | None = None,
    ess: float = 1.0,
    prior: StructurePrior | None = None,
) -> ModelBelief:
    """A single-particle belief at a known structure; never resampled."""
    if prior is None:
        prior = StructurePrior(constraint="symmetric_unit_diag" if structure.symmetric_unit_diag else "free_bipartite")
    return ModelBelief(
        particles=[GraphParticle(structure, prior_counts(structure, space, ess), 0.0)],
        space=space,
        log=log if log is not None else TransitionLog(space),
        prior=prior,
        ess=ess,
    )


def sample_structure(prior: StructurePrior, n: int, rng: np.random.Generator) -> DbnStructure:
    """Draw one graph from the structure prior; free adjacency bits are independent."""
    if prior.constraint == "symmetric_unit_diag":
        # One free bit per unordered pair, each toggling two arcs.
        p_on = 0.5 if prior.mode == "uniform" else prior.beta**2 / (1 + prior.beta**2)
        bits = rng.random((n, n)) < p_on
        a = np.triu(bits, 1)
        a = (a | a.T | np.eye(n, dtype=bool)).astype(np.int8)
        return DbnStructure.from_adjacency(a, symmetric_unit_diag=True)
    p_on = 0.5 if prior.mode == "uniform" else prior.beta / (1 + prior.beta)
    a = (rng.random((n, n)) < p_on).astype(np.int8)
    return DbnStructure.from_adjacency(a)


def init_particles(
    prior: StructurePrior,
    K: int,
    space: FactoredStateSpace,
    rng: np.random.Generator,
    resample_threshold: float = -math.inf,
    ess: float = 1.0,
    log: TransitionLog | None = None,
) -> ModelBelief:
    if K < 1:
        raise ArgumentError(f"need at least one particle, got K={K}")
    lw = -math.log(K)
    particles = []
    for _ in range(K):
        g = sample_structure(prior, space.n, rng)
        particles.append(GraphParticle(g, prior_counts(g, space, ess), lw))
    return ModelBelief(
        particles=particles,
        space=space,
        log=log if log is not None else TransitionLog(space),
        prior=prior,
        resample_threshold=resample_threshold,
        ess=ess,
    )


def update_belief(b: ModelBelief, s, a: int, s_next, mask: int | None = None) -> ModelBelief:
    """Reweight every particle by its posterior predictive of ``s -> s_next`` and add the counts.

    Mutates and returns ``b``. The transition is appended to ``b.log``.
    """
    s = b.space.check_state(s)
    s_next = b.space.check_state(s_next)
    log_pred = np.array([math.log(predictive_prob(p.table, s, s_next, mask)) for p in b.particles])
    unnorm = b.log_weights + log_pred
    log_eta = float(logsumexp(unnorm))
    for p, lw in zip(b.particles, unnorm - log_eta):
        p.log_weight = float(lw)
        p.table.add(s, s_next, mask)
    b.log_likelihood += log_eta
    b.log.append(s, a, s_next, mask)
    return b


def should_resample(b: ModelBelief) -> bool:
    return b.log_likelihood < b.resample_threshold


class FamilyScorer:
    """Memoized BDe family scores against one fixed transition log.

    Scores decompose over variables, so a move touching two parent sets costs
    two family lookups.
    """

    def __init__(self, log: TransitionLog, ess: float = 1.0):
        self.log = log
        self.space = log.space
        self.ess = ess
        self._cache: dict[tuple[int, tuple[int, ...]], float] = {}
        self._len = len(log)

    def family(self, i: int, parents: tuple[int, ...]) -> float:
        if len(self.log) != self._len:
            self._cache.clear()
            self._len = len(self.log)
        key = (i, parents)
        hit = self._cache.get(key)
        if hit is None:
            k = n_parent_keys(self.space, parents)
            card = self.space.cards[i]
            prior = np.full((k, card), self.ess / (k * card))
            hit = family_log_marginal(prior, family_data_counts(self.space, i, parents, self.log))
            self._cache[key] = hit
        return hit

    def score(self, structure: DbnStructure) -> float:
        return sum(self.family(i, par) for i, par in enumerate(structure.parents))


def propose(current: DbnStructure, move_set: str, rng: np.random.Generator) -> tuple[DbnStructure, list[int]]:
    """Toggle one free adjacency entry (or symmetric pair); returns the graph and touched variables."""
    n = current.n
    a = current.adjacency()
    if move_set == "flip_symmetric_pair":
        if n < 2:
            return current, []
        n_pairs = n * (n - 1) // 2
        k = int(rng.integers(n_pairs))
        j, i = _pair_from_index(k, n)
        a[j, i] ^= 1
        a[i, j] ^= 1
        touched = [j, i]
    else:
        k = int(rng.integers(n * n))
        j, i = divmod(k, n)
        a[j, i] ^= 1
        touched = [i]
    parents = list(current.parents)
    for v in touched:
        parents[v] = tuple(np.flatnonzero(a[:, v]).tolist())
    symmetric = current.symmetric_unit_diag and move_set == "flip_symmetric_pair"
    return DbnStructure(tuple(parents), symmetric), touched


def _pair_from_index(k: int, n: int) -> tuple[int, int]:
    # Row-major enumeration of the strict upper triangle.
    j = 0
    while k >= n - 1 - j:
        k -= n - 1 - j
        j += 1
    return j, j + 1 + k


def mh_step(
    current: DbnStructure,
    scorer: FamilyScorer,
    prior: StructurePrior,
    cfg: MhConfig,
    rng: np.random.Generator,
) -> DbnStructure:
    proposal, touched = propose(current, cfg.move_set, rng)
    if not touched or not prior.admits(proposal):
        return current
    log_ratio = sum(scorer.family(v, proposal.parents[v]) - scorer.family(v, current.parents[v]) for v in touched)
    if prior.mode != "uniform":
        log_ratio += log_structure_prior(proposal, prior) - log_structure_prior(current, prior)
    if log_ratio >= 0 or math.log(rng.random()) < log_ratio:
        return proposal
    return current


def run_chain(
    start: DbnStructure,
    scorer: FamilyScorer,
    prior: StructurePrior,
    cfg: MhConfig,
    n_samples: int,
    rng: np.random.Generator,
) -> list[DbnStructure]:
    g = start
    for _ in range(cfg.burn_in):
        g = mh_step(g, scorer, prior, cfg, rng)
    samples = []
    for _ in range(n_samples):
        for _ in range(cfg.thinning):
            g = mh_step(g, scorer, prior, cfg, rng)
        samples.append(g)
    return samples


def resample_particles(b: ModelBelief, cfg: MhConfig, rng: np.random.Generator) -> ModelBelief:
    """Replace the particles with MH draws from ``P(G | log)`` refit from the prior.

    Mutates and returns ``b``; weights become uniform and ``ln L`` resets to 0.
    """
    scorer = FamilyScorer(b.log, b.ess)
    start = b.map_particle().structure
    graphs = run_chain(start, scorer, b.prior, cfg, b.K, rng)
    lw = -math.log(b.K)
    b.particles = [GraphParticle(g, refit(g, b.space, b.log, b.ess), lw) for g in graphs]
    b.log_likelihood = 0.0
    return b
