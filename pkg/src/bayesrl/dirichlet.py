"""Dirichlet count tables over DBN parameters and the BDe marginal likelihood."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy.special import gammaln

from .errors import ArgumentError, DomainError
from .factored import (
    DbnStructure,
    FactoredStateSpace,
    _check_dims,
    n_parent_keys,
    parent_key,
    parent_strides,
)

NO_MASK = -1


class CountTable:
    """Dirichlet counts ``counts[i][key, v]`` for one DBN structure.

    Instances are owned by whoever created them; the module-level functions
    (:func:`observe`) return fresh copies, while :meth:`add` mutates in place.
    """

    def __init__(self, structure: DbnStructure, space: FactoredStateSpace, counts):
        _check_dims(structure, space)
        self.structure = structure
        self.space = space
        self.counts = [np.array(c, dtype=float) for c in counts]
        for i, c in enumerate(self.counts):
            shape = (n_parent_keys(space, structure.parents[i]), space.cards[i])
            if c.shape != shape:
                raise ArgumentError(f"counts for variable {i} have shape {c.shape}, expected {shape}")

    def copy(self) -> "CountTable":
        return CountTable(self.structure, self.space, self.counts)

    def add(self, s, s_next, mask: int | None = None, amount: float = 1.0) -> None:
        for i in range(self.space.n):
            if i == mask:
                continue
            self.counts[i][parent_key(self.structure, self.space, i, s), s_next[i]] += amount

    def row(self, i: int, s) -> np.ndarray:
        return self.counts[i][parent_key(self.structure, self.space, i, s)]

    def total(self) -> float:
        return float(sum(c.sum() for c in self.counts))

    def __eq__(self, other):
        if not isinstance(other, CountTable):
            return NotImplemented
        return self.structure == other.structure and all(
            np.array_equal(a, b) for a, b in zip(self.counts, other.counts)
        )

    def __repr__(self):
        return f"CountTable(n={self.space.n}, edges={self.structure.n_edges}, total={self.total():.4g})"


def prior_counts(structure: DbnStructure, space: FactoredStateSpace, ess: float = 1.0) -> CountTable:
    """Likelihood-equivalent uniform prior: every cell gets ``ess / (|S_Par| |S_i|)``."""
    if ess <= 0:
        raise DomainError(f"equivalent sample size must be positive, got {ess}")
    counts = []
    for i, par in enumerate(structure.parents):
        k = n_parent_keys(space, par)
        counts.append(np.full((k, space.cards[i]), ess / (k * space.cards[i])))
    return CountTable(structure, space, counts)


def observe(table: CountTable, s, s_next, mask: int | None = None) -> CountTable:
    s = table.space.check_state(s)
    s_next = table.space.check_state(s_next)
    out = table.copy()
    out.add(s, s_next, mask)
    return out


def predictive_prob(table: CountTable, s, s_next, mask: int | None = None) -> float:
    """Posterior-mean probability of ``s -> s_next``; variable ``mask`` is left out."""
    s = table.space.check_state(s)
    s_next = table.space.check_state(s_next)
    p = 1.0
    for i in range(table.space.n):
        if i == mask:
            continue
        row = table.row(i, s)
        p *= row[s_next[i]] / row.sum()
    return float(p)


def predictive_vector(table: CountTable, i: int, s) -> np.ndarray:
    row = table.row(i, s)
    return row / row.sum()


@dataclass(frozen=True)
class StructurePrior:
    """Prior over DBN graphs.

    ``mode`` is ``"uniform"`` or ``"edge_penalty"`` (``P(G) ∝ beta**|E(G)|``,
    counting every arc of the bipartite graph). ``constraint`` is
    ``"symmetric_unit_diag"`` or ``"free_bipartite"``.
    """

    mode: str = "uniform"
    beta: float | None = None
    constraint: str = "symmetric_unit_diag"

    def __post_init__(self):
        if self.mode not in ("uniform", "edge_penalty"):
            raise ArgumentError(f"unknown structure prior mode {self.mode!r}")
        if self.constraint not in ("symmetric_unit_diag", "free_bipartite"):
            raise ArgumentError(f"unknown structure constraint {self.constraint!r}")
        if self.mode == "edge_penalty" and not (self.beta is not None and 0 < self.beta < 1):
            raise ArgumentError("edge_penalty prior needs beta in (0, 1)")

    def admits(self, structure: DbnStructure) -> bool:
        if self.constraint == "free_bipartite":
            return True
        a = structure.adjacency()
        return bool(np.array_equal(a, a.T) and np.all(np.diag(a) == 1))


def log_structure_prior(structure: DbnStructure, prior: StructurePrior) -> float:
    """Unnormalized log prior; only differences between graphs are meaningful."""
    if not prior.admits(structure):
        raise DomainError(f"structure violates the {prior.constraint} constraint")
    if prior.mode == "uniform":
        return 0.0
    return structure.n_edges * math.log(prior.beta)


class TransitionLog:
    """Append-only record of observed transitions.

    ``mask`` names a variable whose transition was caused by a known
    intervention and must not inform the learned model (``NO_MASK`` if none).
    """

    def __init__(self, space: FactoredStateSpace):
        self.space = space
        self._s: list[np.ndarray] = []
        self._s_next: list[np.ndarray] = []
        self.actions: list[int] = []
        self._masks: list[int] = []
        self._cache = None

    def __len__(self):
        return len(self._s)

    def append(self, s, action: int, s_next, mask: int | None = None) -> None:
        self._s.append(self.space.check_state(s))
        self._s_next.append(self.space.check_state(s_next))
        self.actions.append(int(action))
        self._masks.append(NO_MASK if mask is None else int(mask))
        self._cache = None

    def __iter__(self) -> Iterator[tuple[np.ndarray, int, np.ndarray, int | None]]:
        for s, a, s2, m in zip(self._s, self.actions, self._s_next, self._masks):
            yield s, a, s2, (None if m == NO_MASK else m)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(S, S_next, masks)`` as arrays of shape ``(T, n)``, ``(T, n)``, ``(T,)``."""
        if self._cache is None:
            n = self.space.n
            if self._s:
                self._cache = (np.stack(self._s), np.stack(self._s_next), np.array(self._masks))
            else:
                empty = np.zeros((0, n), dtype=np.int64)
                self._cache = (empty, empty.copy(), np.zeros(0, dtype=np.int64))
        return self._cache

    def to_csv(self, path, action_label: Callable[[int], str] = str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "action", "s", "s_next"])
            for t, (s, a, s2, _) in enumerate(self):
                w.writerow([t, action_label(a), _encode(s), _encode(s2)])

    @classmethod
    def from_csv(
        cls,
        path,
        space: FactoredStateSpace,
        parse_action: Callable[[str], int] = int,
        mask_for_action: Callable[[int], int | None] = lambda a: None,
    ) -> "TransitionLog":
        log = cls(space)
        with open(Path(path), newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                a = parse_action(row["action"])
                log.append(_decode(row["s"]), a, _decode(row["s_next"]), mask_for_action(a))
        return log


def _encode(s) -> str:
    if np.any(np.asarray(s) > 9):
        raise ArgumentError("state strings support cardinalities up to 10")
    return "".join(str(int(v)) for v in s)


def _decode(text: str) -> list[int]:
    return [int(ch) for ch in text]


def family_data_counts(
    space: FactoredStateSpace, i: int, parents, log: TransitionLog
) -> np.ndarray:
    """Counts of ``(parent key, next value)`` for variable i over unmasked log rows."""
    s, s_next, masks = log.arrays()
    n_keys = n_parent_keys(space, parents)
    keep = masks != i
    if parents:
        keys = s[keep][:, list(parents)] @ parent_strides(space, parents)
    else:
        keys = np.zeros(int(keep.sum()), dtype=np.int64)
    card = space.cards[i]
    flat = np.bincount(keys * card + s_next[keep, i], minlength=n_keys * card)
    return flat.reshape(n_keys, card).astype(float)


def data_counts(structure: DbnStructure, space: FactoredStateSpace, log: TransitionLog) -> list[np.ndarray]:
    return [family_data_counts(space, i, par, log) for i, par in enumerate(structure.parents)]


def refit(structure: DbnStructure, space: FactoredStateSpace, log: TransitionLog, ess: float = 1.0) -> CountTable:
    """Prior counts plus every unmasked transition of ``log`` under ``structure``."""
    table = prior_counts(structure, space, ess)
    for c, d in zip(table.counts, data_counts(structure, space, log)):
        c += d
    return table


def family_log_marginal(prior: np.ndarray, data: np.ndarray) -> float:
    """Dirichlet-multinomial log evidence of one family, summed over parent keys."""
    if np.any(prior <= 0):
        raise DomainError("Dirichlet prior counts must be positive")
    a0 = prior.sum(axis=1)
    n0 = data.sum(axis=1)
    return float(
        np.sum(gammaln(a0) - gammaln(a0 + n0)) + np.sum(gammaln(prior + data) - gammaln(prior))
    )


def log_marginal_likelihood(structure: DbnStructure, prior: CountTable, log: TransitionLog) -> float:
    """BDe score ``ln P(D | G)`` of the log under ``structure`` and the given prior counts."""
    if prior.structure != structure:
        raise ArgumentError("prior counts were built for a different structure")
    return sum(
        family_log_marginal(p, d)
        for p, d in zip(prior.counts, data_counts(structure, prior.space, log))
    )
