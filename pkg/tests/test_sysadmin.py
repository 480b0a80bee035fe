import numpy as np
import pytest

from bayesrl.errors import TopologyParseError
from bayesrl.factored import flatten, transition_prob
from bayesrl.sysadmin import (
    DO_NOTHING,
    FAILED,
    RUNNING,
    EnvState,
    SysadminEnv,
    Topology,
    action_label,
    action_models,
    build_topology,
    expected_next_values,
    linear_topology,
    noop_matrix,
    parse_topology,
    reboot,
    reward,
    true_no_reboot_model,
    true_structure,
)


@pytest.mark.parametrize(
    "kind, n, n_edges, n_states",
    [("linear10", 10, 9, 1024), ("tree13", 13, 12, 8192), ("dense12", 12, 2 * 15 + 1, 4096)],
)
def test_builtin_topologies(kind, n, n_edges, n_states):
    topo = build_topology(kind)
    assert topo.n == n
    assert len(topo.edges) == n_edges
    assert topo.space.n_states == n_states
    g = true_structure(topo)
    a = g.adjacency()
    assert np.array_equal(a, a.T) and np.all(np.diag(a) == 1)


def test_tree_shape():
    topo = build_topology("tree13")
    assert topo.neighbors(0) == [1, 2, 3]
    assert [len(topo.neighbors(i)) for i in range(1, 4)] == [4, 4, 4]
    assert all(len(topo.neighbors(i)) == 1 for i in range(4, 13))


def test_dense_bridge():
    topo = build_topology("dense12")
    assert (0, 6) in topo.edges
    cross = [(a, b) for a, b in topo.edges if (a < 6) != (b < 6)]
    assert cross == [(0, 6)]


def test_true_structure_linear():
    g = true_structure(build_topology("linear10"))
    assert g.parents[0] == (0, 1)
    assert g.parents[5] == (4, 5, 6)
    assert true_structure(Topology.from_edges(1, [])).parents == ((0,),)


class TestTopologyFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "ring.txt"
        path.write_text("# ring of four\n0: 1 3\n1: 0 2\n2: 3\n3:\n", encoding="utf-8")
        topo = build_topology(f"file:{path}")
        assert topo.n == 4
        assert topo.edges == frozenset({(0, 1), (1, 2), (2, 3), (0, 3)})

    @pytest.mark.parametrize(
        "text, line",
        [("0: 1\n1 0\n", 2), ("0: 1\n# c\n1: x\n", 3), ("0: 0\n", 1), ("0: 1\n0: 1\n", 2)],
    )
    def test_errors_carry_line(self, text, line):
        with pytest.raises(TopologyParseError) as info:
            parse_topology(text)
        assert info.value.line == line
        assert f"line {line}" in str(info.value)

    def test_unknown_neighbor(self):
        with pytest.raises(TopologyParseError):
            parse_topology("0: 5\n1:\n")


class TestTrueModel:
    def setup_method(self):
        self.topo = linear_topology(3)
        self.model = true_no_reboot_model(self.topo)

    def _p_up(self, s, i):
        # marginal of var i: sum over the other two variables
        return sum(
            transition_prob(self.model, s, [*x[:i], RUNNING, *x[i:]])
            for x in np.ndindex(2, 2)
        )

    def test_no_failed_neighbors(self):
        assert self._p_up([1, 1, 1], 1) == pytest.approx(29 / 30, abs=1e-12)
        assert 29 / 30 == pytest.approx(0.96667, abs=1e-5)

    def test_two_failed_neighbors(self):
        assert self._p_up([0, 1, 0], 1) == pytest.approx(29 / 30 * 0.81, abs=1e-12)
        assert 29 / 30 * 0.81 == pytest.approx(0.78300, abs=1e-5)

    def test_failed_stays_failed(self):
        assert self._p_up([1, 0, 1], 1) == 0.0

    def test_conditionals_sum_exactly_one(self):
        for t in true_no_reboot_model(build_topology("dense12")).theta:
            assert np.all(t.sum(axis=1) == 1.0)

    def test_linear10_rows_sum_to_one(self):
        mat = flatten(true_no_reboot_model(build_topology("linear10")))
        assert np.max(np.abs(mat.sum(axis=1) - 1)) < 1e-9


def test_rewards():
    s = [RUNNING] * 10
    assert reward(s, DO_NOTHING) == 10
    assert reward(s, reboot(3)) == 9
    assert reward([FAILED] * 10, DO_NOTHING) == 0
    assert action_label(DO_NOTHING) == "noop" and action_label(reboot(3)) == "reboot3"


class TestStep:
    def test_reset_all_running(self):
        env = SysadminEnv(linear_topology(4))
        assert env.reset() == EnvState((1, 1, 1, 1), 0)

    def test_reboot_restores(self):
        env = SysadminEnv(linear_topology(5))
        rng = np.random.default_rng(0)
        for _ in range(200):
            nxt, r = env.step(EnvState((1, 1, 0, 1, 1)), reboot(2), rng)
            assert nxt.state[2] == RUNNING
            assert r == 3.0  # reward of the pre-transition state, minus the reboot

    def test_failed_single_computer_stays_failed(self):
        env = SysadminEnv(Topology.from_edges(1, []))
        rng = np.random.default_rng(0)
        st = EnvState((FAILED,))
        for _ in range(50):
            st, r = env.step(st, DO_NOTHING, rng)
            assert st.state == (FAILED,) and r == 0.0

    def test_reproducible(self):
        env = SysadminEnv(build_topology("linear10"))
        actions = np.random.default_rng(9).integers(0, 11, size=100)

        def trace(seed):
            rng, st, out = np.random.default_rng(seed), env.reset(), []
            for a in actions:
                st, r = env.step(st, int(a), rng)
                out.append((st.state, r))
            return out

        assert trace(3) == trace(3)

    def test_noop_distribution_matches_model(self):
        topo = linear_topology(2)
        env = SysadminEnv(topo)
        rng = np.random.default_rng(11)
        n = 100_000
        counts = np.zeros(4)
        for _ in range(n):
            nxt, _ = env.step(EnvState((1, 1)), DO_NOTHING, rng)
            counts[topo.space.index(nxt.state)] += 1
        expected = flatten(env.model)[topo.space.index((1, 1))]
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(counts / n - expected) <= 3 * sigma + 1e-12)

    def test_reboot_leaves_others_unchanged(self):
        topo = linear_topology(3)
        env = SysadminEnv(topo)
        n = 100_000
        s = EnvState((1, 0, 1))
        marg = {}
        for a in (DO_NOTHING, reboot(1)):
            rng = np.random.default_rng(5 + a)
            up = np.zeros(3)
            for _ in range(n):
                nxt, _ = env.step(s, a, rng)
                up += nxt.state
            marg[a] = up / n
        for j in (0, 2):
            p = marg[DO_NOTHING][j]
            assert abs(marg[reboot(1)][j] - p) < 4 * np.sqrt(2 * p * (1 - p) / n)


def test_reboot_backup_matches_flat_models():
    topo = linear_topology(3)
    mats = np.stack([flatten(m) for m in action_models(topo)])
    v = np.random.default_rng(0).normal(size=8)
    assert np.allclose(expected_next_values(noop_matrix(topo), v, 3), (mats @ v).T)
