import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_behavioral, random_tree
from zsposg.eval import best_response
from zsposg.model import BehavioralStrategy, DecisionRule, build_random_model, registry
from zsposg.strategy import (TreeNode, TreeStrategy, behavioral_to_tree, check_complete, execute_tree,
                             realization_weights, tree_from_json, tree_to_behavioral, tree_to_json)

seeds = st.integers(0, 2**31 - 1)


def all_histories(model, player):
    t = registry(model).table(player)
    return [t.all_at(k) for k in range(model.horizon)]


def test_degenerate_chain_roundtrip():
    m = build_random_model(1, 2, 2, 2, 3)
    beh = random_behavioral(m, 2, np.random.default_rng(0))
    back = tree_to_behavioral(m, behavioral_to_tree(beh))
    for t, hs in enumerate(all_histories(m, 2)):
        assert np.max(np.abs(back.rule(t).lookup(hs) - beh.rule(t).lookup(hs))) <= 1e-12


@given(seeds)
def test_conversion_idempotent(seed):
    rng = np.random.default_rng(seed)
    m = build_random_model(seed % 1000, 2, 2, 2, 3)
    beh = random_behavioral(m, 1, rng)
    once = tree_to_behavioral(m, behavioral_to_tree(beh))
    twice = tree_to_behavioral(m, behavioral_to_tree(once))
    for t, hs in enumerate(all_histories(m, 1)):
        assert np.max(np.abs(once.rule(t).lookup(hs) - twice.rule(t).lookup(hs))) <= 1e-12


def test_terminal_mixture(mp):
    t2 = registry(mp).table(2)
    hs = t2.all_at(1)
    A = DecisionRule.from_map(2, 1, 2, {h: [1, 0] for h in hs})
    B = DecisionRule.from_map(2, 1, 2, {h: [0.5, 0.5] for h in hs})
    child = TreeStrategy(2, 1, (TreeNode(2, 1, A, None), TreeNode(2, 1, B, None)), np.array([0.4, 0.6]))
    root = TreeStrategy.dirac(TreeNode(2, 0, DecisionRule.uniform(2, 0, 2), child))
    beh = tree_to_behavioral(mp, root)
    assert np.allclose(beh.rule(1).lookup(hs), 0.4 * A.lookup(hs) + 0.6 * B.lookup(hs))


@settings(max_examples=20)
@given(seeds)
def test_realization_weights_consistent(seed):
    rng = np.random.default_rng(seed)
    m = build_random_model(seed % 1000, 2, 2, 2, 3)
    rw = realization_weights(m, random_tree(m, 2, rng))
    assert rw.consistency_error() <= 1e-9
    assert rw.rw[0].sum() == pytest.approx(1.0)


@settings(max_examples=20)
@given(seeds)
def test_conversion_preserves_best_response(seed):
    rng = np.random.default_rng(seed)
    m = build_random_model(seed % 1000, int(rng.integers(1, 4)), 2, int(rng.integers(1, 3)), 3)
    player = int(rng.integers(1, 3))
    psi = random_tree(m, player, rng)
    native = best_response(m, psi).value
    converted = best_response(m, tree_to_behavioral(m, psi)).value
    assert native == pytest.approx(converted, abs=1e-6)


def test_check_complete_rejects_missing_child(mp):
    node = TreeNode(1, 0, DecisionRule.uniform(1, 0, 2), None)
    with pytest.raises(ValueError):
        check_complete(TreeStrategy.dirac(node), mp.horizon)


def test_tree_validation(mp):
    with pytest.raises(ValueError):
        TreeNode(1, 0, DecisionRule.uniform(2, 0, 2), None)
    node = TreeNode(1, 1, DecisionRule.uniform(1, 1, 2), None)
    with pytest.raises(ValueError):
        TreeStrategy(1, 1, (node,), np.array([0.5]))


def test_json_roundtrip_keeps_sharing():
    m = build_random_model(2, 2, 2, 2, 3)
    psi = random_tree(m, 1, np.random.default_rng(4))
    data = tree_to_json(m, psi)
    back = tree_from_json(m, data)
    assert tree_to_json(m, back) == data
    a, b = tree_to_behavioral(m, psi), tree_to_behavioral(m, back)
    for t, hs in enumerate(all_histories(m, 1)):
        assert np.allclose(a.rule(t).lookup(hs), b.rule(t).lookup(hs), atol=1e-12)


def test_dirac_chain_executes_deterministically(mp):
    rules = (DecisionRule.from_map(1, 0, 2, {0: [0, 1]}),
             DecisionRule.from_map(1, 1, 2, {h: [1, 0] for h in registry(mp).table(1).all_at(1)}))
    psi = behavioral_to_tree(BehavioralStrategy(1, 0, rules))
    t1 = registry(mp).table(1)
    for seed in range(5):
        ex = execute_tree(psi, seed)
        a0 = ex.act(0)
        assert (a0, ex.act(t1.child(0, a0, 0))) == (1, 0)


def test_seeded_replay_identical():
    m = build_random_model(3, 2, 2, 1, 3)
    psi = random_tree(m, 1, np.random.default_rng(8))
    t1 = registry(m).table(1)

    def play(seed):
        ex, h, out = execute_tree(psi, seed), 0, []
        for _ in range(m.horizon):
            a = ex.act(h)
            out.append(a)
            h = t1.child(h, a, 0)
        return out

    assert [play(s) for s in range(20)] == [play(s) for s in range(20)]


def test_execution_frequencies_match_conversion():
    m = build_random_model(3, 2, 2, 1, 2)
    psi = random_tree(m, 1, np.random.default_rng(9))
    beh = tree_to_behavioral(m, psi)
    t1 = registry(m).table(1)
    rng = np.random.default_rng(0)
    n = 100_000
    counts = {}
    for _ in range(n):
        ex = execute_tree(psi, rng)
        a0 = ex.act(0)
        h = t1.child(0, a0, 0)
        a1 = ex.act(h)
        counts[(0, a0)] = counts.get((0, a0), 0) + 1
        counts[(h, a1)] = counts.get((h, a1), 0) + 1
    visits = {0: n}
    for a in range(2):
        visits[t1.child(0, a, 0)] = counts.get((0, a), 0)
    for (h, a), c in counts.items():
        t = t1.length[h]
        assert c / visits[h] == pytest.approx(beh.rule(t).dist(h)[a], abs=0.01)
