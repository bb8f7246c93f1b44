import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zsposg.model import BehavioralStrategy, DecisionRule, build_random_model, matching_pennies, registry
from zsposg.occupancy import initial_occupancy, transition

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def mp():
    return matching_pennies()


def random_rule(model, player, step, rng, sparse=False):
    """Random rule over every history of ``player`` at ``step``."""
    A = model.n_actions(player)
    ids = registry(model).table(player).all_at(step)
    probs = rng.random((len(ids), A))
    if sparse:
        probs *= rng.random((len(ids), A)) > 0.4
        probs[probs.sum(axis=1) == 0, 0] = 1.0
    return DecisionRule(player, step, A, np.array(ids), probs / probs.sum(axis=1, keepdims=True))


def random_behavioral(model, player, rng, start=0, sparse=False):
    return BehavioralStrategy(player, start, tuple(random_rule(model, player, t, rng, sparse)
                                                   for t in range(start, model.horizon)))


def random_occupancy(model, step, rng, sparse=False):
    occ = initial_occupancy(model)
    for t in range(step):
        occ = transition(occ, random_rule(model, 1, t, rng, sparse), random_rule(model, 2, t, rng, sparse))
    return occ


def small_random_model(rng, max_h=3):
    return build_random_model(int(rng.integers(1 << 30)), int(rng.integers(1, 4)),
                              int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                              int(rng.integers(1, max_h + 1)))


def random_tree(model, player, rng, width=3, start=0):
    """Random tree strategy whose nodes share children across a level."""
    from zsposg.strategy import TreeNode, TreeStrategy

    def dist(nodes):
        k = int(rng.integers(1, len(nodes) + 1))
        pick = rng.choice(len(nodes), size=k, replace=False)
        w = rng.random(k) + 0.05
        return TreeStrategy(player, nodes[0].step, tuple(nodes[i] for i in pick), w / w.sum())

    level = None
    for t in range(model.horizon - 1, start - 1, -1):
        level = [TreeNode(player, t, random_rule(model, player, t, rng, sparse=True),
                          None if level is None else dist(level))
                 for _ in range(width)]
    return dist(level)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
