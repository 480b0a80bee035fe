"""Independent reference computations shared by the test modules."""
import itertools
import math

import numpy as np

from bayesrl.dirichlet import TransitionLog, log_marginal_likelihood, observe, predictive_prob, prior_counts
from bayesrl.factored import DbnStructure, FactoredStateSpace
from bayesrl.structure import GraphParticle, ModelBelief, update_belief
from bayesrl.sysadmin import DO_NOTHING, EnvState, SysadminEnv, linear_topology, true_structure


def sequential_log_evidence(structure, space, log, ess=1.0):
    """Chain rule over the log: query the predictive, then add the counts."""
    table = prior_counts(structure, space, ess)
    total = 0.0
    for s, _, s2, mask in log:
        total += math.log(predictive_prob(table, s, s2, mask))
        table = observe(table, s, s2, mask)
    return total


def random_case(rng, n_max=4, t_max=50):
    n = int(rng.integers(1, n_max + 1))
    space = FactoredStateSpace(tuple(rng.integers(2, 4, size=n).tolist()))
    structure = DbnStructure(tuple(tuple(np.flatnonzero(rng.random(n) < 0.5).tolist()) for _ in range(n)))
    log = TransitionLog(space)
    for _ in range(int(rng.integers(0, t_max + 1))):
        s = [int(rng.integers(c)) for c in space.cards]
        s2 = [int(rng.integers(c)) for c in space.cards]
        mask = int(rng.integers(n)) if rng.random() < 0.2 else None
        log.append(s, 0, s2, mask)
    return structure, space, log


def symmetric_graphs(n):
    """Every symmetric, unit-diagonal structure on n variables."""
    pairs = list(itertools.combinations(range(n), 2))
    out = []
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        a = np.eye(n, dtype=np.int8)
        for (j, i), on in zip(pairs, bits):
            a[j, i] = a[i, j] = on
        out.append(DbnStructure.from_adjacency(a, symmetric_unit_diag=True))
    return out


def exact_posterior(graphs, space, log, ess=1.0, log_prior=None):
    """P(G | log) over an explicit list of graphs by brute-force scoring."""
    scores = np.array(
        [
            log_marginal_likelihood(g, prior_counts(g, space, ess), log) + (log_prior(g) if log_prior else 0.0)
            for g in graphs
        ]
    )
    w = np.exp(scores - scores.max())
    return w / w.sum()


def simulate_noop_log(topology, steps, rng, restart=True):
    """DoNothing trajectory; when every machine has failed the episode restarts
    from all-running (the restart itself is not a logged transition)."""
    env = SysadminEnv(topology)
    log = TransitionLog(topology.space)
    st = env.reset()
    for _ in range(steps):
        nxt, _ = env.step(st, DO_NOTHING, rng)
        log.append(st.state, DO_NOTHING, nxt.state)
        st = nxt
        if restart and not any(st.state):
            st = EnvState(env.reset().state, st.step)
    return log


def true_weight_after_filtering(seed, n=3, K=4, steps=2000, restart=True):
    """Weight of the true structure after filtering a simulated DoNothing log
    with K-1 distinct competitors drawn from the other symmetric graphs."""
    rng = np.random.default_rng(seed)
    topo = linear_topology(n)
    truth = true_structure(topo)
    others = [g for g in symmetric_graphs(n) if g != truth]
    picks = rng.choice(len(others), size=K - 1, replace=False)
    graphs = [truth] + [others[i] for i in picks]
    space = topo.space
    b = ModelBelief(
        particles=[GraphParticle(g, prior_counts(g, space), -math.log(K)) for g in graphs],
        space=space,
        log=TransitionLog(space),
    )
    for s, a, s2, m in simulate_noop_log(topo, steps, rng, restart):
        update_belief(b, s, a, s2, m)
    return float(b.weights[0])


def true_agent_model(topology):
    """Planner model whose every action uses the exact DBN."""
    from bayesrl.planner import AgentModel, KnownTransition
    from bayesrl.sysadmin import action_models, reward_matrix

    return AgentModel(
        topology.space,
        [KnownTransition(m) for m in action_models(topology)],
        lambda states: reward_matrix(states, topology.n_actions),
    )


def finite_horizon_q(topology, depth, gamma, discount=True):
    """Exact depth-limited lookahead values with the max-reward fringe: ``(S, A)``."""
    from bayesrl.factored import flatten
    from bayesrl.sysadmin import action_models, reward_matrix

    t = np.stack([flatten(m) for m in action_models(topology)])
    r = reward_matrix(topology.space.enumerate(), topology.n_actions)
    v = r.max(axis=1)
    disc = gamma if discount else 1.0
    for _ in range(depth):
        q = r + disc * np.einsum("ast,t->sa", t, v)
        v = q.max(axis=1)
    return q
