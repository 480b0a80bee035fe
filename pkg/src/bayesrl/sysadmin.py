"""Network administration benchmark.

Each computer is failed (0) or running (1). A running computer stays up with
probability ``p_stay * neighbor_factor ** n_failed_neighbors``; a failed one
stays down until rebooted. Actions are encoded as integers: ``DO_NOTHING = 0``
and ``reboot(i) = i + 1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, TopologyParseError
from .factored import DbnModel, DbnStructure, FactoredStateSpace, flatten

FAILED, RUNNING = 0, 1
DO_NOTHING = 0
BUILTIN_TOPOLOGIES = ("linear10", "tree13", "dense12")


def reboot(i: int) -> int:
    return i + 1


def rebooted(action: int) -> int | None:
    """Index of the computer rebooted by ``action``, or None for DoNothing."""
    return None if action == DO_NOTHING else action - 1


def action_label(action: int) -> str:
    return "noop" if action == DO_NOTHING else f"reboot{action - 1}"


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError("topology needs at least one computer")
        canon = set()
        for a, b in self.edges:
            if a == b:
                raise ArgumentError(f"self-loop on node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ArgumentError(f"edge ({a}, {b}) references a node >= {self.n}")
            canon.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(canon))

    @classmethod
    def from_edges(cls, n: int, edges) -> "Topology":
        return cls(n, frozenset(tuple(e) for e in edges))

    def neighbors(self, i: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    @property
    def space(self) -> FactoredStateSpace:
        return FactoredStateSpace.binary(self.n)

    @property
    def n_actions(self) -> int:
        return self.n + 1


def linear_topology(n: int) -> Topology:
    return Topology.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def tree_topology(depth: int = 2, arity: int = 3) -> Topology:
    edges, frontier, nxt = [], [0], 1
    for _ in range(depth):
        children = []
        for p in frontier:
            for _ in range(arity):
                edges.append((p, nxt))
                children.append(nxt)
                nxt += 1
        frontier = children
    return Topology.from_edges(nxt, edges)


def dense_topology(clique: int = 6, bridge: tuple[int, int] = (0, 0)) -> Topology:
    """Two cliques of ``clique`` nodes joined by one bridge edge.

    ``bridge`` names the node within each clique that carries the link.
    """
    edges = list(itertools.combinations(range(clique), 2))
    edges += [(a + clique, b + clique) for a, b in itertools.combinations(range(clique), 2)]
    edges.append((bridge[0], clique + bridge[1]))
    return Topology.from_edges(2 * clique, edges)


def parse_topology(text: str) -> Topology:
    """Parse ``"<node>: <nbr> <nbr> ..."`` lines; ``#`` starts a comment line."""
    adjacency: dict[int, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, rest = line.partition(":")
        if not sep:
            raise TopologyParseError(f"expected '<node>: <neighbors>', got {raw!r}", lineno)
        try:
            node = int(head)
            nbrs = [int(tok) for tok in rest.split()]
        except ValueError:
            raise TopologyParseError(f"non-integer node id in {raw!r}", lineno) from None
        if node < 0 or any(v < 0 for v in nbrs):
            raise TopologyParseError("node ids must be non-negative", lineno)
        if node in adjacency:
            raise TopologyParseError(f"node {node} listed twice", lineno)
        if node in nbrs:
            raise TopologyParseError(f"node {node} lists itself as a neighbor", lineno)
        adjacency[node] = nbrs
    if not adjacency:
        raise TopologyParseError("topology file lists no nodes")
    n = max(adjacency) + 1
    if sorted(adjacency) != list(range(n)):
        missing = sorted(set(range(n)) - set(adjacency))
        raise TopologyParseError(f"nodes must be listed 0..{n - 1}; missing {missing}")
    edges = set()
    for node, nbrs in adjacency.items():
        for v in nbrs:
            if v >= n:
                raise TopologyParseError(f"neighbor {v} of node {node} is not a listed node")
            edges.add((min(node, v), max(node, v)))
    return Topology(n, frozenset(edges))


def build_topology(kind: str) -> Topology:
    """One of the builtin networks, or ``file:PATH`` / a path to a topology file."""
    if kind == "linear10":
        return linear_topology(10)
    if kind == "tree13":
        return tree_topology(2, 3)
    if kind == "dense12":
        return dense_topology(6)
    path = Path(kind[5:] if kind.startswith("file:") else kind)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ArgumentError(f"cannot read topology file {path}: {exc}") from exc
    return parse_topology(text)


@dataclass(frozen=True)
class SysadminParams:
    p_stay: float = 29 / 30
    neighbor_factor: float = 0.9
    gamma: float = 0.95
    reward_running: float = 1.0
    reward_reboot: float = -1.0

    def __post_init__(self):
        if not (0 < self.p_stay <= 1 and 0 < self.neighbor_factor <= 1):
            raise ArgumentError("p_stay and neighbor_factor must lie in (0, 1]")
        if not 0 < self.gamma < 1:
            raise ArgumentError("gamma must lie in (0, 1)")


def true_structure(topology: Topology) -> DbnStructure:
    return DbnStructure(
        tuple((i, *topology.neighbors(i)) for i in range(topology.n)),
        symmetric_unit_diag=True,
    )


def true_no_reboot_model(topology: Topology, params: SysadminParams = SysadminParams()) -> DbnModel:
    structure = true_structure(topology)

    def cpd(i, e):
        values = dict(zip(structure.parents[i], e))
        if values[i] == FAILED:
            return (1.0, 0.0)
        n_failed = sum(1 for j, v in values.items() if j != i and v == FAILED)
        up = params.p_stay * params.neighbor_factor**n_failed
        return (1.0 - up, up)

    return DbnModel.from_function(structure, topology.space, cpd)


def reboot_model(base: DbnModel, i: int) -> DbnModel:
    """``base`` with computer i forced to running; every other computer unchanged."""
    theta = list(base.theta)
    forced = np.zeros_like(theta[i])
    forced[:, RUNNING] = 1.0
    theta[i] = forced
    return DbnModel(base.structure, base.space, tuple(theta))


def action_models(topology: Topology, params: SysadminParams = SysadminParams()) -> list[DbnModel]:
    """True DBN for every action, indexed by action code."""
    base = true_no_reboot_model(topology, params)
    return [base] + [reboot_model(base, i) for i in range(topology.n)]


def reward(s, action: int, params: SysadminParams = SysadminParams()) -> float:
    s = np.asarray(s)
    r = params.reward_running * float(np.sum(s == RUNNING))
    if rebooted(action) is not None:
        r += params.reward_reboot
    return r


def _running_count(states: np.ndarray) -> np.ndarray:
    # States are 0/1 with RUNNING == 1; an integer matmul beats a row-wise sum.
    n = states.shape[1]
    dtype = states.dtype if np.iinfo(states.dtype).max >= n else np.int64
    return states @ np.ones(n, dtype=dtype)


def reward_matrix(states: np.ndarray, n_actions: int, params: SysadminParams = SysadminParams()) -> np.ndarray:
    """Rewards of every action for each row of ``states``: shape ``(m, n_actions)``."""
    states = np.atleast_2d(states)
    running = params.reward_running * _running_count(states).astype(float)
    out = np.repeat(running[:, None], n_actions, axis=1)
    out[:, 1:] += params.reward_reboot
    return out


def max_reward(states: np.ndarray, params: SysadminParams = SysadminParams()) -> np.ndarray:
    """``max_a R(s, a)`` per row without building the reward matrix."""
    states = np.atleast_2d(states)
    return params.reward_running * _running_count(states) + max(0.0, params.reward_reboot)


@dataclass(frozen=True)
class EnvState:
    state: tuple[int, ...]
    step: int = 0


class SysadminEnv:
    """Seedable simulator over a topology. ``step`` is a pure function of its inputs."""

    def __init__(self, topology: Topology, params: SysadminParams = SysadminParams()):
        self.topology = topology
        self.params = params
        self.model = true_no_reboot_model(topology, params)

    @property
    def n_actions(self) -> int:
        return self.topology.n_actions

    def reset(self) -> EnvState:
        return EnvState((RUNNING,) * self.topology.n, 0)

    def step(self, env: EnvState, action: int, rng: np.random.Generator) -> tuple[EnvState, float]:
        if not 0 <= action < self.n_actions:
            raise ArgumentError(f"invalid action {action} for {self.topology.n} computers")
        s = np.asarray(env.state, dtype=np.int64)
        r = reward(s, action, self.params)
        # Always draw n uniforms so the noise stream is aligned across policies.
        u = rng.random(self.topology.n)
        up = self.model.conditionals(s[None])[0, :, RUNNING]
        nxt = (u < up).astype(np.int64)
        target = rebooted(action)
        if target is not None:
            nxt[target] = RUNNING
        return EnvState(tuple(int(v) for v in nxt), env.step + 1), r


def noop_matrix(topology: Topology, params: SysadminParams = SysadminParams()) -> np.ndarray:
    return flatten(true_no_reboot_model(topology, params))


def expected_next_values(t_noop: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``E[V(s')]`` for every state and action, shape ``(S, n + 1)``.

    A reboot of i moves every other computer by the no-reboot law and sets i
    running, so its expectation is the no-reboot expectation of ``V`` with bit
    i forced on. Only the single no-reboot matrix is needed.
    """
    idx = np.arange(len(values))
    cols = [values]
    for i in range(n):
        bit = 1 << (n - 1 - i)
        cols.append(values[idx | bit])
    return t_noop @ np.stack(cols, axis=1)
