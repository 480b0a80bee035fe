"""Depth-limited Monte Carlo lookahead over (state, model posterior), plus value iteration.

Each action draws its successor model from either a known DBN or a learned
:class:`~bayesrl.structure.ModelBelief`. Inside the search tree, posterior
updates for hypothetical transitions are stored as small count deltas on top
of a packed copy of the belief, so branching never copies count tables and
the caller's belief is never touched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ArgumentError, CapacityError
from .factored import MAX_FLAT_STATES, DbnModel, FactoredStateSpace, stride_matrix
from .structure import ModelBelief

RewardFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PlannerConfig:
    depth: int = 2
    branch: int = 5
    gamma: float = 0.95
    # Literal reading of the pseudo-code adds undiscounted child values.
    discount_recursion: bool = True
    fringe: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.depth < 1 or self.branch < 1:
            raise ArgumentError("depth and branch must be >= 1")
        if not 0 < self.gamma < 1:
            raise ArgumentError("gamma must lie in (0, 1)")


@dataclass(frozen=True)
class KnownTransition:
    model: DbnModel


@dataclass(frozen=True)
class LearnedTransition:
    """Successors drawn from ``beliefs[belief_key]``; ``forced`` variables are set
    deterministically and excluded from posterior updates."""

    belief_key: Hashable
    forced: Mapping[int, int] = field(default_factory=dict)


class AgentModel:
    """Per-action model sources plus a vectorized reward.

    ``reward(states)`` maps an ``(m, n)`` array to the ``(m, n_actions)``
    matrix of ``R(s, a)``.
    """

    def __init__(self, space: FactoredStateSpace, sources: Sequence[KnownTransition | LearnedTransition], reward: RewardFn):
        if not sources:
            raise ArgumentError("need at least one action")
        for src in sources:
            if not isinstance(src, (KnownTransition, LearnedTransition)):
                raise ArgumentError(f"unsupported model source {src!r}")
        self.space = space
        self.sources = list(sources)
        self.reward = reward
        self._known = {a: _Packed.from_model(src.model) for a, src in enumerate(sources) if isinstance(src, KnownTransition)}

    @property
    def n_actions(self) -> int:
        return len(self.sources)

    def belief_keys(self) -> set:
        return {src.belief_key for src in self.sources if isinstance(src, LearnedTransition)}


@dataclass(frozen=True)
class _KnownKey:
    action: int


class _Packed:
    """Count (or probability) tables of K particles stacked into one array.

    Row ``offsets[k, i] + strides[k, i] @ s`` holds the counts of variable i
    under particle k at state s. Shared read-only by every node of a search.
    """

    __slots__ = ("strides", "offsets", "table", "log_weights")

    def __init__(self, strides, offsets, table, log_weights):
        self.strides = strides
        self.offsets = offsets
        self.table = table
        self.log_weights = log_weights

    @classmethod
    def from_belief(cls, b: ModelBelief) -> "_Packed":
        cmax = max(b.space.cards)
        strides, offsets, blocks, start = [], [], [], 0
        for p in b.particles:
            strides.append(stride_matrix(p.structure, b.space))
            row = []
            for c in p.table.counts:
                row.append(start)
                block = np.zeros((c.shape[0], cmax))
                block[:, : c.shape[1]] = c
                blocks.append(block)
                start += c.shape[0]
            offsets.append(row)
        return cls(np.stack(strides), np.array(offsets), np.concatenate(blocks), b.log_weights - logsumexp(b.log_weights))

    @classmethod
    def from_model(cls, model: DbnModel) -> "_Packed":
        cmax = max(model.space.cards)
        offsets, blocks, start = [], [], 0
        for t in model.theta:
            offsets.append(start)
            block = np.zeros((t.shape[0], cmax))
            block[:, : t.shape[1]] = t
            blocks.append(block)
            start += t.shape[0]
        return cls(
            stride_matrix(model.structure, model.space)[None],
            np.array([offsets]),
            np.concatenate(blocks),
            np.zeros(1),
        )

    @property
    def K(self) -> int:
        return len(self.log_weights)

    def root(self, n: int) -> "_Nodes":
        k = self.K
        return _Nodes(
            self.log_weights[None].copy(),
            np.zeros((1, 0, k, n), dtype=np.int64),
            np.zeros((1, 0, n), dtype=np.int64),
            np.zeros((1, 0, n), dtype=bool),
        )

    def conditionals(self, states: np.ndarray, nodes: "_Nodes") -> tuple[np.ndarray, np.ndarray]:
        """Table rows ``(M, K, n)`` and next-value distributions ``(M, K, n, C)`` of M nodes."""
        rows = self.offsets[None] + np.einsum("kij,mj->mki", self.strides, states)
        cnt = self.table[rows]
        for level in range(nodes.depth):
            hit = (rows == nodes.rows[:, level]) & nodes.active[:, level, None, :]
            vals = nodes.vals[:, level, None, :]
            for c in range(cnt.shape[-1]):
                cnt[..., c] += hit & (vals == c)
        return rows, cnt / cnt.sum(axis=-1, keepdims=True)


@dataclass
class _Nodes:
    """Per-node posterior state of one belief across M search nodes.

    Hypothetical transitions along each node's path are kept as unit count
    increments: at path level l, table row ``rows[m, l, k, i]`` gains one count
    in column ``vals[m, l, i]`` wherever ``active[m, l, i]``.
    """

    log_weights: np.ndarray  # (M, K)
    rows: np.ndarray  # (M, L, K, n)
    vals: np.ndarray  # (M, L, n)
    active: np.ndarray  # (M, L, n)

    @property
    def depth(self) -> int:
        return self.rows.shape[1]

    def take(self, idx) -> "_Nodes":
        return _Nodes(self.log_weights[idx], self.rows[idx], self.vals[idx], self.active[idx])


def _draw(log_weights: np.ndarray, probs: np.ndarray, n_samples: int, rng: np.random.Generator, dtype=np.int64) -> np.ndarray:
    """Per node, pick particles by weight then sample every variable by inverse CDF: ``(M, N, n)``."""
    m, k, n, c = probs.shape
    cum = np.cumsum(probs[..., :-1], axis=-1)
    if k == 1:
        ck = cum[:, None, 0]
    else:
        cw = np.cumsum(np.exp(log_weights), axis=1)
        u = rng.random((m, n_samples)) * cw[:, -1:]
        idx = np.minimum((u[:, :, None] >= cw[:, None, :]).sum(axis=-1), k - 1)
        ck = cum[np.arange(m)[:, None], idx]
    u = rng.random((m, n_samples, n))
    if c == 2:
        hit = u >= ck[..., 0]
        # A bool array reinterpreted as int8 is already 0/1; no copy needed.
        return hit.view(np.int8) if np.dtype(dtype) == np.int8 else hit.astype(dtype)
    return (u[..., None] >= ck).sum(axis=-1, dtype=dtype)


# Rough cap on array elements materialized per batch of search nodes.
_BATCH_ELEMENTS = 1 << 21


class _Search:
    """Level-synchronous expansion: every node at one depth is processed as a batch."""

    def __init__(self, m: AgentModel, beliefs: Mapping[Hashable, ModelBelief], cfg: PlannerConfig, rng):
        missing = m.belief_keys() - set(beliefs)
        if missing:
            raise ArgumentError(f"no belief supplied for keys {sorted(map(str, missing))}")
        self.m = m
        self.cfg = cfg
        self.rng = rng
        self.n = m.space.n
        self.disc = cfg.gamma if cfg.discount_recursion else 1.0
        self.fringe = cfg.fringe or (lambda states: m.reward(states).max(axis=1))
        # Sources keyed by belief key for learned actions and _KnownKey(a) otherwise.
        self.packed: dict[Hashable, _Packed] = {key: _Packed.from_belief(beliefs[key]) for key in m.belief_keys()}
        self.packed.update({_KnownKey(a): p for a, p in m._known.items()})
        self.groups: dict[Hashable, list[int]] = {}
        self.forced: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for a, src in enumerate(m.sources):
            key = src.belief_key if isinstance(src, LearnedTransition) else _KnownKey(a)
            self.groups.setdefault(key, []).append(a)
            forced = src.forced if isinstance(src, LearnedTransition) else {}
            idx = np.array(sorted(forced), dtype=np.int64)
            vals = np.array([forced[i] for i in sorted(forced)], dtype=np.int64)
            active = np.ones(self.n, dtype=bool)
            active[idx] = False
            self.forced.append((idx, vals, active))
        self.learned = [key for key in self.groups if not isinstance(key, _KnownKey)]
        self.dtype = np.int8 if max(m.space.cards) <= 127 else np.int64
        self.outcomes = None
        if m.space.n_states <= cfg.branch:
            self.outcomes = m.space.enumerate().astype(np.int64)
            self.outcome_fringe = np.asarray(self.fringe(self.outcomes.astype(self.dtype)), dtype=float)
        kmax = max(p.K for p in self.packed.values())
        self._node_cost = m.n_actions * cfg.branch * self.n * (kmax * (cfg.depth + 2) + 2)

    def root(self, s: np.ndarray) -> tuple[np.ndarray, dict]:
        return s[None].astype(self.dtype), {key: self.packed[key].root(self.n) for key in self.groups}

    def _sampled(self, states, nodes, n_samples):
        """Yield ``(action, successors (M, N, n))`` and fill ``cond`` with per-source ``(rows, probs)``."""
        cond = {}
        self._cond = cond
        for key, actions in self.groups.items():
            rows, probs = self.packed[key].conditionals(states, nodes[key])
            cond[key] = (rows, probs)
            for a in actions:
                draws = _draw(nodes[key].log_weights, probs, n_samples, self.rng, self.dtype)
                idx, vals, _ = self.forced[a]
                draws[:, :, idx] = vals
                yield a, draws

    def successors(self, states, nodes, n_samples):
        """Sampled successors ``(M, A, N, n)`` plus per-source ``(rows, probs)``."""
        out = np.empty((len(states), self.m.n_actions, n_samples, self.n), dtype=self.dtype)
        for a, draws in self._sampled(states, nodes, n_samples):
            out[:, a] = draws
        return out, self._cond

    def children(self, nodes, cond, succ) -> dict:
        """Node beliefs after each sampled transition, flattened in ``(M, A, N)`` order."""
        m, n_actions, n_samples, n = succ.shape
        parent = np.repeat(np.arange(m), n_actions * n_samples)
        out = {}
        for key in self.groups:
            node = nodes[key]
            if key not in self.learned:
                out[key] = node.take(parent)
                continue
            rows, probs = cond[key]
            k = rows.shape[1]
            active = np.zeros((n_actions, n), dtype=bool)
            for a in self.groups[key]:
                active[a] = self.forced[a][2]
            act = np.broadcast_to(active[None, :, None, :], succ.shape)
            pred = np.take_along_axis(
                probs[:, None, None], np.broadcast_to(succ[:, :, :, None, :, None], (m, n_actions, n_samples, k, n, 1)), -1
            )[..., 0]
            with np.errstate(divide="ignore"):
                lw = node.log_weights[:, None, None, :] + np.log(np.where(act[:, :, :, None, :], pred, 1.0)).sum(axis=-1)
            lw = (lw - logsumexp(lw, axis=-1, keepdims=True)).reshape(-1, k)
            new_rows = np.broadcast_to(rows[:, None, None], (m, n_actions, n_samples, k, n)).reshape(-1, 1, k, n)
            out[key] = _Nodes(
                lw,
                np.concatenate([node.rows[parent], new_rows], axis=1),
                np.concatenate([node.vals[parent], succ.reshape(-1, 1, n)], axis=1),
                np.concatenate([node.active[parent], act.reshape(-1, 1, n)], axis=1),
            )
        return out

    def q_values(self, states, nodes, d) -> np.ndarray:
        """``(M, A)`` lookahead values of M nodes with ``d`` levels left."""
        N = self.cfg.branch
        m = len(states)
        r = self.m.reward(states)
        if d == 1 and self.outcomes is not None:
            cont = self._leaf_by_counts(states, nodes)
        elif d == 1:
            cont = np.empty((m, self.m.n_actions))
            for a, draws in self._sampled(states, nodes, N):
                cont[:, a] = self.fringe(draws.reshape(-1, self.n)).reshape(m, N).mean(axis=1)
        else:
            succ, cond = self.successors(states, nodes, N)
            kids = self.children(nodes, cond, succ)
            values = self.values(succ.reshape(-1, self.n), kids, d - 1)
            cont = values.reshape(m, self.m.n_actions, N).mean(axis=2)
        return r + self.disc * cont

    def _leaf_by_counts(self, states, nodes) -> np.ndarray:
        """Last-level averages from multinomial outcome counts.

        The mean fringe value of N i.i.d. successors has the same law as
        ``counts @ fringe(outcomes) / N`` with ``counts ~ Multinomial(N, P(s' | s, a))``,
        which is far cheaper when the joint outcome space is small.
        """
        N = self.cfg.branch
        cont = np.empty((len(states), self.m.n_actions))
        cols = np.arange(self.n)[None, :]
        for key, actions in self.groups.items():
            _, probs = self.packed[key].conditionals(states, nodes[key])
            w = np.exp(nodes[key].log_weights)
            for a in actions:
                idx, vals, _ = self.forced[a]
                pa = probs
                if len(idx):
                    pa = probs.copy()
                    pa[:, :, idx, :] = 0.0
                    pa[:, :, idx, vals] = 1.0
                joint = np.einsum("mk,mkj->mj", w, pa[:, :, cols, self.outcomes].prod(axis=-1))
                joint /= joint.sum(axis=1, keepdims=True)
                counts = self.rng.multinomial(N, joint)
                cont[:, a] = counts @ self.outcome_fringe / N
        return cont

    def values(self, states, nodes, d) -> np.ndarray:
        if d == 0:
            return np.asarray(self.fringe(states), dtype=float)
        chunk = max(1, _BATCH_ELEMENTS // self._node_cost)
        if len(states) <= chunk:
            return self.q_values(states, nodes, d).max(axis=1)
        parts = []
        for lo in range(0, len(states), chunk):
            sl = slice(lo, lo + chunk)
            parts.append(self.q_values(states[sl], {k: v.take(sl) for k, v in nodes.items()}, d).max(axis=1))
        return np.concatenate(parts)


def _search(m, beliefs, cfg, rng, s):
    s = m.space.check_state(s)
    return _Search(m, beliefs or {}, cfg, rng), s


def sample_belief_successor(
    m: AgentModel, beliefs: Mapping[Hashable, ModelBelief], s, a: int, rng: np.random.Generator
) -> np.ndarray:
    """One successor of ``(s, a)``: pick a particle by weight, then sample its predictive."""
    if not 0 <= a < m.n_actions:
        raise ArgumentError(f"invalid action {a}")
    search, s = _search(m, beliefs, PlannerConfig(), rng, s)
    src = m.sources[a]
    key = src.belief_key if isinstance(src, LearnedTransition) else _KnownKey(a)
    states, nodes = search.root(s)
    _, probs = search.packed[key].conditionals(states, nodes[key])
    draw = _draw(nodes[key].log_weights, probs, 1, rng)[0, 0].copy()
    idx, vals, _ = search.forced[a]
    draw[idx] = vals
    return draw


def v_estimate(
    m: AgentModel,
    s,
    beliefs: Mapping[Hashable, ModelBelief],
    d: int,
    cfg: PlannerConfig,
    rng: np.random.Generator,
) -> float:
    if not 0 <= d <= cfg.depth:
        raise ArgumentError(f"depth {d} outside [0, {cfg.depth}]")
    search, s = _search(m, beliefs, cfg, rng, s)
    states, nodes = search.root(s)
    return float(search.values(states, nodes, d)[0])


def plan_values(m: AgentModel, s, beliefs, cfg: PlannerConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    search, s = _search(m, beliefs, cfg, rng, s)
    states, nodes = search.root(s)
    q = search.q_values(states, nodes, cfg.depth)[0]
    return int(np.argmax(q)), q


def plan(m: AgentModel, s, beliefs, cfg: PlannerConfig, rng: np.random.Generator) -> int:
    """Best root action of the lookahead; ties go to the lowest action index."""
    return plan_values(m, s, beliefs, cfg, rng)[0]


@dataclass
class ValueIterationResult:
    values: np.ndarray
    q: np.ndarray
    policy: np.ndarray
    residuals: list[float]


def value_iteration_backup(
    expect: Callable[[np.ndarray], np.ndarray],
    rewards: np.ndarray,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> ValueIterationResult:
    """Value iteration given ``expect(V) -> E[V(s') | s, a]`` of shape ``(S, A)``."""
    if not 0 < gamma < 1:
        raise ArgumentError("gamma must lie in (0, 1)")
    rewards = np.asarray(rewards, dtype=float)
    v = np.zeros(rewards.shape[0])
    residuals = []
    for _ in range(max_iter):
        q = rewards + gamma * expect(v)
        v_new = q.max(axis=1)
        residuals.append(float(np.max(np.abs(v_new - v))))
        v = v_new
        if residuals[-1] < tol:
            break
    q = rewards + gamma * expect(v)
    return ValueIterationResult(v, q, greedy_policy(q), residuals)


def greedy_policy(q: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Lowest-index action within round-off of each row's maximum."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - rtol * np.maximum(1.0, np.abs(best)), axis=1)


def value_iteration(transitions, rewards, gamma: float, tol: float = 1e-8, max_iter: int = 100_000) -> ValueIterationResult:
    """Solve a flat MDP; ``transitions[a]`` is an ``(S, S)`` matrix and ``rewards`` is ``(S, A)``."""
    t = np.asarray(transitions, dtype=float)
    if t.ndim != 3 or t.shape[1] != t.shape[2]:
        raise ArgumentError(f"transitions must have shape (A, S, S), got {t.shape}")
    if t.shape[1] > MAX_FLAT_STATES:
        raise CapacityError(f"{t.shape[1]} states exceeds flat-matrix cap {MAX_FLAT_STATES}")
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (t.shape[1], t.shape[0]):
        raise ArgumentError(f"rewards must have shape (S, A) = {(t.shape[1], t.shape[0])}")
    return value_iteration_backup(lambda v: np.einsum("ast,t->sa", t, v), rewards, gamma, tol, max_iter)
