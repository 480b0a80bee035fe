import time

import pytest

from bayesrl.harness import AGENT_KINDS, ExperimentConfig, run_experiment

import acceptance_report

LINEAR10_SEEDS = 20
LINEAR10_STEPS = 600


def pytest_terminal_summary(terminalreporter):
    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def linear10_runs(tmp_path_factory):
    """All four agents on linear10 with the published parameters, shared seeds."""
    root = tmp_path_factory.mktemp("linear10")
    out, elapsed = {}, {}
    for agent in AGENT_KINDS:
        cfg = ExperimentConfig.for_env(
            "linear10", agent=agent, steps=LINEAR10_STEPS, seeds=LINEAR10_SEEDS, out=str(root / agent)
        )
        t0 = time.perf_counter()
        res = run_experiment(cfg)
        elapsed[agent] = time.perf_counter() - t0
        assert not res.failed, res.failed
        out[agent] = [res.runs[i] for i in sorted(res.runs)]
    return out, elapsed
