"""Tree strategies and their conversion to behavioral strategies.

A tree strategy is a distribution over nodes; each node carries a decision
rule for its step and a child distribution for the next step.  Executing it
means: sample a node, play its rule on the current history, then continue
from the node's child distribution.  Children may be shared between nodes,
so the structure is a DAG.

The conversion goes through realization weights.  For every node we compute
the weight its sub-strategy gives to each full-length own sequence (mixing
over children, then prefixing the node's own rule); those weights are then
marginalized to every prefix and divided to get action probabilities.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import BehavioralStrategy, DecisionRule, ModelError, PosgModel, registry

_NODE_IDS = itertools.count()


@dataclass(frozen=True, eq=False)
class TreeNode:
    player: int
    step: int
    rule: DecisionRule
    child: "TreeStrategy | None"
    uid: int = field(default_factory=lambda: next(_NODE_IDS))

    def __post_init__(self):
        if self.rule.player != self.player or self.rule.step != self.step:
            raise ValueError("node rule does not match the node's player and step")
        if self.child is not None and (self.child.step != self.step + 1
                                       or self.child.player != self.player):
            raise ValueError("node child must be a tree strategy for the next step")


@dataclass(frozen=True, eq=False)
class TreeStrategy:
    player: int
    step: int
    nodes: tuple[TreeNode, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.clip(np.asarray(self.probs, float).reshape(-1), 0.0, None)
        if len(probs) != len(self.nodes) or not self.nodes:
            raise ValueError("tree strategy needs one probability per node")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"tree strategy weights sum to {probs.sum():.9g}")
        probs = probs / probs.sum()
        probs.flags.writeable = False
        for n in self.nodes:
            if n.step != self.step or n.player != self.player:
                raise ValueError("tree strategy mixes nodes from another step or player")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "probs", probs)

    @classmethod
    def dirac(cls, node: TreeNode) -> "TreeStrategy":
        return cls(node.player, node.step, (node,), np.ones(1))

    def support(self):
        return [(n, p) for n, p in zip(self.nodes, self.probs) if p > 0]


def behavioral_to_tree(strategy: BehavioralStrategy) -> TreeStrategy:
    """Embed a behavioral strategy as a chain of single-node distributions."""
    child = None
    for rule in reversed(strategy.rules):
        node = TreeNode(strategy.player, rule.step, rule, child)
        child = TreeStrategy.dirac(node)
    return child


def check_complete(psi: TreeStrategy, horizon: int):
    seen = set()
    stack = [psi]
    while stack:
        cur = stack.pop()
        for node in cur.nodes:
            if node.uid in seen:
                continue
            seen.add(node.uid)
            if node.step < horizon - 1:
                if node.child is None:
                    raise ValueError(f"node at step {node.step} lacks a child distribution")
                stack.append(node.child)
            elif node.child is not None:
                raise ValueError("node at the last step must not have a child")


@dataclass
class RealizationWeights:
    """Prefix realization weights ``rw[k][i, a]`` for histories ``levels[k][i]``.

    Histories at level ``k + 1`` are laid out so that the child of entry ``i``
    through action ``a`` and observation ``z`` sits at ``(i * A + a) * Z + z``.
    """

    start: int
    n_actions: int
    n_obs: int
    levels: list[np.ndarray]
    rw: list[np.ndarray]

    def consistency_error(self) -> float:
        """Largest violation of ``rw(h, a) = sum_a' rw(h a z, a')`` over all ``z``."""
        A, Z = self.n_actions, self.n_obs
        worst = 0.0
        for k in range(len(self.rw) - 1):
            nxt = self.rw[k + 1].sum(axis=1).reshape(len(self.levels[k]), A, Z)
            worst = max(worst, float(np.max(np.abs(nxt - self.rw[k][:, :, None]))))
        return worst


def _enumerate_levels(model: PosgModel, player: int, roots, start: int) -> list[np.ndarray]:
    table = registry(model).table(player)
    levels = [np.asarray(roots, np.int64)]
    for _ in range(start, model.horizon - 1):
        levels.append(table.children(levels[-1]).reshape(-1))
    return levels


def realization_weights(model: PosgModel, psi: TreeStrategy, roots=None) -> RealizationWeights:
    """Phases one and two of the conversion: full-length conditional weights
    per node (memoized by node identity), then prefix marginals."""
    player, start, H = psi.player, psi.step, model.horizon
    check_complete(psi, H)
    A, Z = model.n_actions(player), model.n_obs(player)
    if roots is None:
        roots = registry(model).table(player).all_at(start)
    levels = _enumerate_levels(model, player, roots, start)
    n_leaf = len(levels[-1])
    # ancestor index and action taken after it, for every leaf and level
    anc = {H - 1: np.arange(n_leaf)}
    act = {}
    for k in range(H - 2, start - 1, -1):
        anc[k] = anc[k + 1] // (A * Z)
        act[k] = (anc[k + 1] // Z) % A

    cat_memo: dict[int, np.ndarray] = {}
    mix_memo: dict[int, np.ndarray] = {}

    def rw_mix(tree: TreeStrategy) -> np.ndarray:
        key = id(tree)
        if key not in mix_memo:
            out = np.zeros((n_leaf, A))
            for node, p in tree.support():
                out += p * rw_cat(node)
            mix_memo[key] = out
        return mix_memo[key]

    def rw_cat(node: TreeNode) -> np.ndarray:
        if node.uid not in cat_memo:
            k = node.step
            probs = node.rule.lookup(levels[k - start])
            if k == H - 1:
                cat_memo[node.uid] = probs
            else:
                factor = probs[anc[k], act[k]]
                cat_memo[node.uid] = factor[:, None] * rw_mix(node.child)
        return cat_memo[node.uid]

    full = rw_mix(psi)
    rw = [None] * len(levels)
    rw[-1] = full
    for k in range(len(levels) - 2, -1, -1):
        n = len(levels[k])
        first_obs = rw[k + 1].sum(axis=1).reshape(n, A, Z)[:, :, 0]
        rw[k] = first_obs
    return RealizationWeights(start, A, Z, levels, rw)


def tree_to_behavioral(model: PosgModel, psi: TreeStrategy, roots=None) -> BehavioralStrategy:
    rws = realization_weights(model, psi, roots)
    A, Z = rws.n_actions, rws.n_obs
    rules = []
    for k, (hs, rw) in enumerate(zip(rws.levels, rws.rw)):
        if k == 0:
            denom = np.ones(len(hs))
        else:
            idx = np.arange(len(hs))
            denom = rws.rw[k - 1][idx // (A * Z), (idx // Z) % A]
        probs = np.full((len(hs), A), 1.0 / A)
        live = denom > 0
        probs[live] = rw[live] / denom[live, None]
        # rows summing off one by fp noise get renormalized in DecisionRule
        rules.append(DecisionRule(psi.player, psi.step + k, A, hs, probs))
    return BehavioralStrategy(psi.player, psi.step, tuple(rules))


class TreeExecution:
    """On-line play of a tree strategy: each call to ``act`` samples a node
    from the current distribution, samples an action from its rule, and moves
    to that node's child distribution."""

    def __init__(self, psi: TreeStrategy, rng: np.random.Generator):
        self.current = psi
        self.rng = rng
        self.step = psi.step

    def act(self, history: int) -> int:
        if self.current is None:
            raise RuntimeError("tree strategy exhausted")
        cur = self.current
        node = cur.nodes[self.rng.choice(len(cur.nodes), p=cur.probs)]
        probs = node.rule.dist(history)
        action = int(self.rng.choice(len(probs), p=probs))
        self.current = node.child
        self.step += 1
        return action


def execute_tree(psi: TreeStrategy, rng: np.random.Generator | int | None = None) -> TreeExecution:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return TreeExecution(psi, rng)


def _collect_nodes(psi: TreeStrategy) -> list[TreeNode]:
    order: list[TreeNode] = []
    seen = set()

    def visit(tree):
        for node in tree.nodes:
            if node.uid in seen:
                continue
            seen.add(node.uid)
            order.append(node)
            if node.child is not None:
                visit(node.child)

    visit(psi)
    return order


def tree_to_json(model: PosgModel, psi: TreeStrategy) -> dict:
    table = registry(model).table(psi.player)
    nodes = _collect_nodes(psi)
    index = {n.uid: i for i, n in enumerate(nodes)}

    def dist(tree):
        return {"nodes": [index[n.uid] for n in tree.nodes], "probs": [float(p) for p in tree.probs]}

    return {
        "player": psi.player,
        "step": psi.step,
        "horizon": model.horizon,
        "root": dist(psi),
        "nodes": [
            {"id": i, "step": n.step,
             "rule": [{"aoh": table.to_string(int(h)), "dist": [float(x) for x in p]}
                      for h, p in zip(n.rule.ids, n.rule.probs)],
             "child": None if n.child is None else dist(n.child)}
            for i, n in enumerate(nodes)
        ],
    }


def tree_from_json(model: PosgModel, data: dict) -> TreeStrategy:
    player = int(data["player"])
    table = registry(model).table(player)
    A = model.n_actions(player)
    specs = {int(n["id"]): n for n in data["nodes"]}
    built: dict[int, TreeNode] = {}

    def dist(spec) -> TreeStrategy:
        nodes = tuple(node(int(i)) for i in spec["nodes"])
        return TreeStrategy(player, nodes[0].step, nodes, np.asarray(spec["probs"], float))

    def node(i: int) -> TreeNode:
        if i not in built:
            if i not in specs:
                raise ModelError(f"tree references unknown node {i}")
            s = specs[i]
            mapping = {table.from_string(e["aoh"]): e["dist"] for e in s["rule"]}
            rule = DecisionRule.from_map(player, int(s["step"]), A, mapping)
            child = None if s["child"] is None else dist(s["child"])
            built[i] = TreeNode(player, int(s["step"]), rule, child)
        return built[i]

    return dist(data["root"])
