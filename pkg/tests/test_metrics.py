import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesrl.dirichlet import CountTable, TransitionLog, prior_counts
from bayesrl.errors import ArgumentError, CapacityError
from bayesrl.factored import DbnModel, DbnStructure, FactoredStateSpace
from bayesrl.metrics import (
    StepRecord,
    discounted_returns,
    distribution_error,
    distribution_error_grouped,
    moving_average,
    return_accounting,
    structure_distance,
    structure_error,
)
from bayesrl.structure import GraphParticle, ModelBelief, fixed_belief, init_particles
from bayesrl.dirichlet import StructurePrior
from bayesrl.sysadmin import Topology, linear_topology, true_no_reboot_model, true_structure


def belief_of(space, pairs):
    """Belief from ``(structure, counts tuple, weight)`` triples."""
    parts = [GraphParticle(g, CountTable(g, space, tuple(np.asarray(c, float) for c in cs)), np.log(w)) for g, cs, w in pairs]
    return ModelBelief(parts, space, TransitionLog(space))


def random_model(rng, space, structure):
    theta = []
    for i, par in enumerate(structure.parents):
        k = int(np.prod([space.cards[j] for j in par])) if par else 1
        theta.append(rng.dirichlet(np.ones(space.cards[i]), size=k))
    return DbnModel(structure, space, tuple(theta))


def random_structure(rng, n):
    return DbnStructure(tuple(tuple(np.flatnonzero(rng.random(n) < 0.5).tolist()) for _ in range(n)))


def random_belief(rng, space, K):
    pairs = []
    for _ in range(K):
        g = random_structure(rng, space.n)
        counts = [rng.gamma(1.0, 2.0, size=c.shape) + 1e-3 for c in prior_counts(g, space).counts]
        pairs.append((g, counts, float(rng.random() + 0.1)))
    b = belief_of(space, pairs)
    lw = b.log_weights
    for p, w in zip(b.particles, lw - np.log(np.exp(lw).sum())):
        p.log_weight = float(w)
    return b


class TestDistributionError:
    def test_zero_at_truth(self):
        model = true_no_reboot_model(linear_topology(3))
        b = belief_of(model.space, [(model.structure, [t * 1e15 for t in model.theta], 1.0)])
        assert distribution_error(b, model) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_vs_fixed_conditional(self):
        space = FactoredStateSpace.binary(1)
        g = DbnStructure(((0,),))
        truth = DbnModel(g, space, (np.array([[1 / 30, 29 / 30], [1 / 30, 29 / 30]]),))
        b = fixed_belief(g, space)
        assert distribution_error(b, truth) == pytest.approx(4 * (29 / 30 - 0.5), abs=1e-12)
        assert distribution_error(b, truth) == pytest.approx(1.86667, abs=1e-5)

    def test_uniform_vs_sysadmin_single_machine(self):
        model = true_no_reboot_model(Topology.from_edges(1, []))
        b = fixed_belief(model.structure, model.space)
        # failed row (1, 0) contributes 1, running row contributes 2 * (29/30 - 1/2)
        assert distribution_error(b, model) == pytest.approx(1 + 2 * (29 / 30 - 0.5), abs=1e-12)

    def test_positive_on_mismatch(self):
        model = true_no_reboot_model(linear_topology(3))
        b = fixed_belief(true_structure(linear_topology(3)), model.space)
        assert distribution_error(b, model) > 0

    def test_capacity(self):
        model = true_no_reboot_model(linear_topology(4))
        with pytest.raises(CapacityError):
            distribution_error(fixed_belief(model.structure, model.space), model, limit=8)

    @pytest.mark.parametrize("seed", range(10))
    def test_naive_equals_grouped(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        space = FactoredStateSpace(tuple(rng.integers(2, 4, size=n).tolist()))
        model = random_model(rng, space, random_structure(rng, n))
        b = random_belief(rng, space, int(rng.integers(1, 4)))
        assert distribution_error(b, model) == pytest.approx(distribution_error_grouped(b, model), abs=1e-9)

    def test_grouped_linear10(self):
        topo = linear_topology(10)
        model = true_no_reboot_model(topo)
        b = init_particles(StructurePrior(), 3, topo.space, np.random.default_rng(0))
        assert distribution_error(b, model) == pytest.approx(distribution_error_grouped(b, model), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_replacing_a_row_with_truth_never_hurts(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    space = FactoredStateSpace(tuple(rng.integers(2, 4, size=n).tolist()))
    g = random_structure(rng, n)
    model = random_model(rng, space, g)
    b = random_belief(rng, space, 2)
    b.particles[0].structure = g
    b.particles[0].table = CountTable(g, space, tuple(rng.gamma(1.0, 1.0, size=t.shape) + 1e-3 for t in model.theta))
    before = distribution_error(b, model)
    i = int(rng.integers(n))
    row = int(rng.integers(model.theta[i].shape[0]))
    b.particles[0].table.counts[i][row] = model.theta[i][row] * 7.0
    assert distribution_error(b, model) <= before + 1e-12


class TestStructureError:
    def test_zero_at_truth(self):
        g = true_structure(linear_topology(10))
        b = belief_of(FactoredStateSpace.binary(10), [(g, prior_counts(g, FactoredStateSpace.binary(10)).counts, 1.0)] * 3)
        assert structure_error(b, g) == 0.0

    def test_one_symmetric_edge(self):
        g = true_structure(linear_topology(4))
        a = g.adjacency()
        a[0, 3] = a[3, 0] = 1
        assert structure_distance(DbnStructure.from_adjacency(a, True), g) == 2

    def test_full_joint_vs_linear10(self):
        truth = true_structure(linear_topology(10))
        space = FactoredStateSpace.binary(10)
        b = fixed_belief(DbnStructure.complete(10), space)
        assert structure_error(b, truth) == 72.0

    def test_weighted(self):
        space = FactoredStateSpace.binary(3)
        truth = true_structure(linear_topology(3))
        other = DbnStructure.complete(3)
        b = belief_of(
            space,
            [(truth, prior_counts(truth, space).counts, 0.25), (other, prior_counts(other, space).counts, 0.75)],
        )
        assert structure_error(b, truth) == pytest.approx(0.75 * 2)

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g, h = random_structure(rng, 5), random_structure(rng, 5)
            assert structure_distance(g, h) == structure_distance(h, g)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            structure_distance(DbnStructure.complete(2), DbnStructure.complete(3))


class TestReturns:
    def test_discounted(self):
        assert discounted_returns([10, 9], 0.95)[-1] == pytest.approx(18.55)

    def test_constant_reward(self):
        ma, disc = return_accounting([3.0] * 2000, 0.9, 50)
        assert np.allclose(ma, 3.0)
        assert disc[-1] == pytest.approx(3.0 / (1 - 0.9), rel=1e-9)

    def test_window_longer_than_history(self):
        assert moving_average([1, 2, 3], 50).tolist() == [1.0, 1.5, 2.0]

    def test_sliding(self):
        r = np.arange(10.0)
        assert moving_average(r, 3)[-1] == pytest.approx((7 + 8 + 9) / 3)

    def test_records_accepted(self):
        recs = [StepRecord(t + 1, 0, r, 0.0, 0.0) for t, r in enumerate([10.0, 9.0])]
        ma, disc = return_accounting(recs, 0.95, 50)
        assert ma.tolist() == [10.0, 9.5] and disc[-1] == pytest.approx(18.55)

    def test_errors(self):
        with pytest.raises(ArgumentError):
            return_accounting([])
        with pytest.raises(ArgumentError):
            moving_average([1.0], 0)
