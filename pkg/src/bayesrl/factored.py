"""Factored state spaces and DBN transition models.

States are integer vectors, one dense 0-based value per variable. A DBN
structure lists, for every next-step variable, the previous-step variables it
depends on. Parent assignments are addressed by a mixed-radix key over the
sorted parent values, first parent most significant (``np.ravel_multi_index``
order), so ``key = values[parents] @ strides``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ArgumentError, CapacityError, ModelIncompleteError

MAX_ENUM_STATES = 2**20
# A dense S x S matrix of float64 at 2**13 states is 512 MiB.
MAX_FLAT_STATES = 2**13


@dataclass(frozen=True)
class FactoredStateSpace:
    cards: tuple[int, ...]

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cards)
        if len(cards) < 1:
            raise ArgumentError("a state space needs at least one variable")
        if any(c < 2 for c in cards):
            raise ArgumentError(f"every cardinality must be >= 2, got {cards}")
        object.__setattr__(self, "cards", cards)

    @classmethod
    def binary(cls, n: int) -> "FactoredStateSpace":
        return cls((2,) * n)

    @property
    def n(self) -> int:
        return len(self.cards)

    @property
    def n_states(self) -> int:
        return math.prod(self.cards)

    def check_state(self, s) -> np.ndarray:
        """Return ``s`` as an int array, raising ArgumentError if malformed."""
        arr = np.asarray(s)
        if arr.shape != (self.n,):
            raise ArgumentError(f"state must have length {self.n}, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise ArgumentError(f"state values must be integers: {s!r}")
        arr = arr.astype(np.int64)
        if np.any(arr < 0) or np.any(arr >= np.asarray(self.cards)):
            raise ArgumentError(f"state {arr.tolist()} out of range for cards {self.cards}")
        return arr

    def index(self, s) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(s)), self.cards))

    def state(self, index: int) -> np.ndarray:
        return np.array(np.unravel_index(index, self.cards), dtype=np.int64)

    def enumerate(self, limit: int = MAX_ENUM_STATES) -> np.ndarray:
        """All states as an ``(S, n)`` array, ordered by :meth:`index`."""
        if self.n_states > limit:
            raise CapacityError(f"{self.n_states} states exceeds enumeration cap {limit}")
        idx = np.arange(self.n_states)
        return np.stack(np.unravel_index(idx, self.cards), axis=1).astype(np.int64)


@dataclass(frozen=True)
class DbnStructure:
    """Bipartite DBN graph: ``parents[i]`` are the previous-step parents of variable i.

    Parent sets are canonicalized to sorted, duplicate-free tuples, so two
    structures built from differently ordered inputs compare equal.
    """

    parents: tuple[tuple[int, ...], ...]
    symmetric_unit_diag: bool = False

    def __post_init__(self):
        n = len(self.parents)
        if n < 1:
            raise ArgumentError("structure needs at least one variable")
        canon = []
        for i, par in enumerate(self.parents):
            par = tuple(sorted({int(j) for j in par}))
            if par and (par[0] < 0 or par[-1] >= n):
                raise ArgumentError(f"parent index out of range for variable {i}: {par}")
            canon.append(par)
        object.__setattr__(self, "parents", tuple(canon))
        if self.symmetric_unit_diag:
            a = self.adjacency()
            if not (np.array_equal(a, a.T) and np.all(np.diag(a) == 1)):
                raise ArgumentError("structure flagged symmetric_unit_diag is not symmetric with unit diagonal")

    @property
    def n(self) -> int:
        return len(self.parents)

    def adjacency(self) -> np.ndarray:
        """``A[j, i] = 1`` iff j is a parent of i."""
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for i, par in enumerate(self.parents):
            a[list(par), i] = 1
        return a

    @classmethod
    def from_adjacency(cls, a, symmetric_unit_diag: bool = False) -> "DbnStructure":
        a = np.asarray(a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ArgumentError(f"adjacency must be square, got shape {a.shape}")
        parents = tuple(tuple(np.flatnonzero(a[:, i]).tolist()) for i in range(a.shape[0]))
        return cls(parents, symmetric_unit_diag)

    @classmethod
    def complete(cls, n: int) -> "DbnStructure":
        """Every next-step variable depends on every previous-step variable."""
        return cls(tuple(tuple(range(n)) for _ in range(n)), symmetric_unit_diag=True)

    @property
    def n_edges(self) -> int:
        return sum(len(p) for p in self.parents)

    def with_parents(self, i: int, par: Iterable[int]) -> "DbnStructure":
        parents = list(self.parents)
        parents[i] = tuple(par)
        return DbnStructure(tuple(parents), self.symmetric_unit_diag)


def parent_strides(space: FactoredStateSpace, parents: Sequence[int]) -> np.ndarray:
    cards = [space.cards[j] for j in parents]
    strides = np.ones(len(cards), dtype=np.int64)
    for k in range(len(cards) - 2, -1, -1):
        strides[k] = strides[k + 1] * cards[k + 1]
    return strides


def n_parent_keys(space: FactoredStateSpace, parents: Sequence[int]) -> int:
    return math.prod(space.cards[j] for j in parents)


def stride_matrix(structure: DbnStructure, space: FactoredStateSpace) -> np.ndarray:
    """``W[i, j]`` is the key stride of parent j for variable i (0 if not a parent).

    Parent keys of many states at once are then ``states @ W.T``.
    """
    _check_dims(structure, space)
    w = np.zeros((space.n, space.n), dtype=np.int64)
    for i, par in enumerate(structure.parents):
        w[i, list(par)] = parent_strides(space, par)
    return w


def _check_dims(structure: DbnStructure, space: FactoredStateSpace) -> None:
    if structure.n != space.n:
        raise ArgumentError(f"structure has {structure.n} variables, space has {space.n}")


def _check_var(structure: DbnStructure, var: int) -> int:
    if not 0 <= var < structure.n:
        raise ArgumentError(f"variable index {var} out of range [0, {structure.n})")
    return int(var)


def parent_values(structure: DbnStructure, var: int, s, space: FactoredStateSpace | None = None) -> tuple[int, ...]:
    var = _check_var(structure, var)
    if space is not None:
        s = space.check_state(s)
    else:
        s = np.asarray(s)
        if s.shape != (structure.n,):
            raise ArgumentError(f"state must have length {structure.n}")
    return tuple(int(s[j]) for j in structure.parents[var])


def parent_key(structure: DbnStructure, space: FactoredStateSpace, var: int, s) -> int:
    var = _check_var(structure, var)
    par = structure.parents[var]
    if not par:
        return 0
    return int(np.asarray(s)[list(par)] @ parent_strides(space, par))


@dataclass(frozen=True)
class DbnModel:
    """A DBN with explicit conditional tables.

    ``theta[i]`` has shape ``(n_keys_i, card_i)``; row ``key`` is the
    distribution of variable i given parent assignment ``key``.
    """

    structure: DbnStructure
    space: FactoredStateSpace
    theta: tuple[np.ndarray, ...]
    _strides: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_dims(self.structure, self.space)
        if len(self.theta) != self.space.n:
            raise ModelIncompleteError(f"expected {self.space.n} conditional tables, got {len(self.theta)}")
        tables = []
        for i, t in enumerate(self.theta):
            t = np.array(t, dtype=float)
            shape = (n_parent_keys(self.space, self.structure.parents[i]), self.space.cards[i])
            if t.shape != shape:
                raise ModelIncompleteError(f"table for variable {i} has shape {t.shape}, expected {shape}")
            if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, rtol=0, atol=1e-12):
                raise ArgumentError(f"table for variable {i} is not row-stochastic")
            t.setflags(write=False)
            tables.append(t)
        object.__setattr__(self, "theta", tuple(tables))
        object.__setattr__(self, "_strides", stride_matrix(self.structure, self.space))

    @classmethod
    def from_function(
        cls,
        structure: DbnStructure,
        space: FactoredStateSpace,
        cpd: Callable[[int, tuple[int, ...]], Sequence[float]],
    ) -> "DbnModel":
        """Build tables by calling ``cpd(var, parent_values)`` for every assignment."""
        theta = []
        for i, par in enumerate(structure.parents):
            combos = np.ndindex(*(space.cards[j] for j in par)) if par else [()]
            theta.append(np.array([cpd(i, tuple(int(v) for v in e)) for e in combos], dtype=float))
        return cls(structure, space, tuple(theta))

    @classmethod
    def from_entries(
        cls,
        structure: DbnStructure,
        space: FactoredStateSpace,
        entries: Mapping[tuple[int, tuple[int, ...]], Sequence[float]],
    ) -> "DbnModel":
        """Build from a ``{(var, parent_values): distribution}`` mapping."""

        def lookup(i, e):
            try:
                return entries[(i, e)]
            except KeyError:
                raise ModelIncompleteError(f"no distribution for variable {i} given parents {e}") from None

        return cls.from_function(structure, space, lookup)

    def conditionals(self, states: np.ndarray) -> np.ndarray:
        """Per-variable next-value distributions for each row of ``states``.

        Returns an array of shape ``(m, n, max_card)``, zero-padded.
        """
        states = np.atleast_2d(states)
        keys = states @ self._strides.T
        out = np.zeros((states.shape[0], self.space.n, max(self.space.cards)))
        for i, t in enumerate(self.theta):
            out[:, i, : t.shape[1]] = t[keys[:, i]]
        return out


def transition_prob(model: DbnModel, s, s_next) -> float:
    s = model.space.check_state(s)
    s_next = model.space.check_state(s_next)
    p = 1.0
    for i, t in enumerate(model.theta):
        p *= t[parent_key(model.structure, model.space, i, s), s_next[i]]
    return float(p)


def sample_successor(model: DbnModel, s, rng: np.random.Generator) -> np.ndarray:
    s = model.space.check_state(s)
    probs = model.conditionals(s[None])[0]
    return sample_from_conditionals(probs, rng.random(model.space.n))


def sample_from_conditionals(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of each variable; ``probs[..., i, :]`` zero-padded.

    ``u`` has the shape of ``probs`` without its last axis.
    """
    cum = np.cumsum(probs, axis=-1)
    # Padded columns keep cum at the row total, so they are never selected.
    return (u[..., None] >= cum[..., :-1]).sum(axis=-1)


def flatten(model: DbnModel, limit: int = MAX_FLAT_STATES) -> np.ndarray:
    """Dense ``(S, S)`` transition matrix in :meth:`FactoredStateSpace.index` order."""
    space = model.space
    if space.n_states > limit:
        raise CapacityError(f"{space.n_states} states exceeds flat-matrix cap {limit}")
    states = space.enumerate()
    cond = model.conditionals(states)
    mat = np.ones((len(states), 1))
    for i, card in enumerate(space.cards):
        mat = (mat[:, :, None] * cond[:, i, None, :card]).reshape(len(states), -1)
    return mat
