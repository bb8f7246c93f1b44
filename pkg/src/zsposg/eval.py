"""Ground truth: exact best responses, exploitability and two independent
equilibrium-value oracles for small games."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .games_lp import lp_backend, matrix_game_value
from .model import BehavioralStrategy, DecisionRule, PosgModel, registry
from .occupancy import (Conditional, Marginal, OccupancyState, expected_reward, initial_occupancy,
                        recompose, transition)
from .strategy import TreeStrategy, behavioral_to_tree, tree_to_behavioral

SFLP_MAX_SEQUENCES = 100_000
BRUTE_MAX_PLANS = 10_000


class OracleSizeError(RuntimeError):
    pass


@dataclass
class BestResponse:
    """Best-response values in the responder's own payoff.

    ``nu`` maps each own history at the start step to its conditional value
    (total value divided by the history's probability); ``value`` is the
    probability-weighted sum; ``policy`` holds one pure action per visited
    history as ``{(step, history): action}``.
    """

    responder: int
    step: int
    nu: dict[int, float]
    value: float
    policy: dict[tuple[int, int], int]

    def as_strategy(self, model: PosgModel) -> BehavioralStrategy:
        A = model.n_actions(self.responder)
        rules = []
        for t in range(self.step, model.horizon):
            mapping = {}
            for (k, h), a in self.policy.items():
                if k == t:
                    mapping[h] = np.eye(A)[a]
            rules.append(DecisionRule.from_map(self.responder, t, A, mapping))
        return BehavioralStrategy(self.responder, self.step, tuple(rules))


def _as_tree(strategy) -> TreeStrategy:
    if isinstance(strategy, BehavioralStrategy):
        return behavioral_to_tree(strategy)
    if isinstance(strategy, TreeStrategy):
        return strategy
    raise TypeError(f"expected a behavioral or tree strategy, got {type(strategy).__name__}")


def _start_entries(model: PosgModel, start):
    """``(h1, h2, p, belief)`` rows for an occupancy state or a
    (marginal, conditional) pair."""
    if start is None:
        start = initial_occupancy(model)
    reg = registry(model)
    if isinstance(start, OccupancyState):
        return start.step, [(int(a), int(b), float(p), reg.belief[j])
                            for a, b, p, j in zip(start.h1, start.h2, start.p, start.jidx)]
    marg, cond = start
    if not isinstance(cond, Conditional):
        raise TypeError("start must be an occupancy state or (marginal, conditional)")
    if not isinstance(marg, Marginal):
        ids = np.array(sorted(marg), np.int64)
        marg = Marginal(cond.player, cond.step, ids, np.array([marg[int(h)] for h in ids]))
    rows = []
    for (h1, h2), p in recompose(marg, cond).items():
        if p <= 0:
            continue
        j = reg.joint(h1, h2)
        if j < 0:
            raise ValueError("start distribution holds an unreachable joint history")
        rows.append((h1, h2, p, reg.belief[j]))
    return cond.step, rows


def best_response(model: PosgModel, opponent, start=None) -> BestResponse:
    """Exact best response to ``opponent`` (behavioral or tree strategy).

    Backward induction over the responder's own history tree.  The hidden
    part of each information state is a weight over (state, opponent
    history, opponent tree distribution); weights stay unnormalized so that
    values add up directly.
    """
    tree = _as_tree(opponent)
    me = 3 - tree.player
    step, rows = _start_entries(model, start)
    if tree.step != step:
        raise ValueError(f"opponent strategy starts at step {tree.step}, start state at {step}")
    H, gamma = model.horizon, model.discount
    reg = registry(model)
    tme, top = reg.table(me), reg.table(tree.player)
    A, Z = model.n_actions(me), model.n_obs(me)
    # axes: (s, a_me, a_opp, s2, z_me, z_opp) and (s, a_me, a_opp)
    if me == 1:
        P, R = model.trans, model.reward
    else:
        P, R = model.trans.transpose(0, 2, 1, 3, 5, 4), -model.reward.transpose(0, 2, 1)
    trees: dict[int, TreeStrategy] = {}
    policy: dict[tuple[int, int], int] = {}

    def expand(hidden: dict, t: int):
        """Opponent moves: ``[(s, h_opp, ao, child tree id, weight)]``."""
        out = []
        for (s, ho, tid), w in hidden.items():
            for node, p in trees[tid].support():
                probs = node.rule.dist(ho)
                cid = -1
                if node.child is not None:
                    cid = id(node.child)
                    trees[cid] = node.child
                for ao in np.nonzero(probs)[0]:
                    out.append((s, ho, int(ao), cid, w * p * probs[ao]))
        return out

    def value(h: int, t: int, hidden: dict) -> float:
        moves = expand(hidden, t)
        best, best_a = -np.inf, 0
        for a in range(A):
            total = 0.0
            children = [dict() for _ in range(Z)]
            for s, ho, ao, cid, w in moves:
                total += w * R[s, a, ao]
                if t + 1 < H:
                    trans = P[s, a, ao]
                    for s2, zm, zo in zip(*np.nonzero(trans)):
                        key = (int(s2), top.child(ho, ao, int(zo)), cid)
                        d = children[zm]
                        d[key] = d.get(key, 0.0) + w * trans[s2, zm, zo]
            if t + 1 < H:
                for z in range(Z):
                    if children[z]:
                        total += gamma * value(tme.child(h, a, z), t + 1, children[z])
            if total > best + 1e-12:
                best, best_a = total, a
        policy[(t, h)] = best_a
        return best

    trees[id(tree)] = tree
    roots: dict[int, dict] = {}
    mass: dict[int, float] = {}
    for h1, h2, p, b in rows:
        hm, ho = (h1, h2) if me == 1 else (h2, h1)
        d = roots.setdefault(hm, {})
        mass[hm] = mass.get(hm, 0.0) + p
        for s in np.nonzero(b)[0]:
            key = (int(s), ho, id(tree))
            d[key] = d.get(key, 0.0) + p * b[s]
    nu, total = {}, 0.0
    for hm in sorted(roots):
        v = value(hm, step, roots[hm])
        total += v
        nu[hm] = v / mass[hm]
    return BestResponse(me, step, nu, total, policy)


def profile_value(model: PosgModel, strategy1, strategy2) -> float:
    """Expected discounted payoff to player 1 when both strategies are played."""
    beh = [tree_to_behavioral(model, s) if isinstance(s, TreeStrategy) else s
           for s in (strategy1, strategy2)]
    occ = initial_occupancy(model)
    total = 0.0
    for t in range(model.horizon):
        b1, b2 = beh[0].rule(t), beh[1].rule(t)
        total += model.discount ** t * expected_reward(occ, b1, b2)
        if t + 1 < model.horizon:
            occ = transition(occ, b1, b2)
    return total


def security_values(model: PosgModel, strategy1, strategy2) -> tuple[float, float]:
    """``(nu1, nu2)``: player 1's security level and the value player 1
    obtains by best-responding to player 2, both in player 1's payoff."""
    nu2 = best_response(model, strategy2).value
    nu1 = -best_response(model, strategy1).value
    return nu1, nu2


def exploitability(model: PosgModel, strategy1, strategy2) -> float:
    nu1, nu2 = security_values(model, strategy1, strategy2)
    return 0.5 * (nu2 - nu1)


def sl_gap_percentage(model: PosgModel, strategy1, strategy2) -> float:
    spread = model.horizon * (model.r_max - model.r_min)
    if spread == 0:
        return 0.0
    return 100.0 * 2.0 * exploitability(model, strategy1, strategy2) / spread


def evaluate_profile(model: PosgModel, strategy1, strategy2) -> dict:
    nu1, nu2 = security_values(model, strategy1, strategy2)
    expl = 0.5 * (nu2 - nu1)
    spread = model.horizon * (model.r_max - model.r_min)
    return {"nu1": nu1, "nu2": nu2, "exploitability": expl,
            "sl_gap_pct": 100.0 * 2.0 * expl / spread if spread else 0.0}


# sequence-form oracle

@dataclass
class _Sequences:
    """Own histories by step and the sequence index of ``(h, a)``."""

    player: int
    histories: list[list[int]]
    index: dict[tuple[int, int], int]
    n: int

    def parent_seq(self, table, h: int) -> int:
        if h == 0:
            return 0
        return self.index[(table.parent[h], table.action[h])]


def _sequences(model: PosgModel, player: int) -> _Sequences:
    table = registry(model).table(player)
    A, Z = model.n_actions(player), model.n_obs(player)
    count = 1 + A * sum((A * Z) ** t for t in range(model.horizon))
    if count > SFLP_MAX_SEQUENCES:
        raise OracleSizeError(f"player {player} has {count} sequences (limit {SFLP_MAX_SEQUENCES})")
    levels = [[0]]
    for _ in range(model.horizon - 1):
        levels.append([table.child(h, a, z) for h in levels[-1] for a in range(A) for z in range(Z)])
    index = {}
    n = 1
    for hs in levels:
        for h in hs:
            for a in range(A):
                index[(h, a)] = n
                n += 1
    return _Sequences(player, levels, index, n)


def _sequence_payoff(model: PosgModel, seq1: _Sequences, seq2: _Sequences) -> np.ndarray:
    """``A[x, y]``: discounted expected reward of sequence pair, weighted by
    the chance probability of the joint history."""
    A1, A2 = model.n_actions(1), model.n_actions(2)
    t1, t2 = registry(model).table(1), registry(model).table(2)
    pay = np.zeros((seq1.n, seq2.n))
    alpha = {(0, 0): model.b0.copy()}
    for t in range(model.horizon):
        g = model.discount ** t
        nxt = {}
        for (h1, h2), al in alpha.items():
            for a1 in range(A1):
                for a2 in range(A2):
                    pay[seq1.index[(h1, a1)], seq2.index[(h2, a2)]] += g * al @ model.reward[:, a1, a2]
                    if t + 1 == model.horizon:
                        continue
                    flow = np.einsum("s,stxy->txy", al, model.trans[:, a1, a2])
                    for z1, z2 in zip(*np.nonzero(flow.sum(axis=0))):
                        key = (t1.child(h1, a1, int(z1)), t2.child(h2, a2, int(z2)))
                        nxt[key] = flow[:, z1, z2]
        alpha = nxt
    return pay


def _constraints(model: PosgModel, seqs: _Sequences) -> np.ndarray:
    """Rows: empty sequence, then one flow row per own history."""
    table = registry(model).table(seqs.player)
    A = model.n_actions(seqs.player)
    hs = [h for level in seqs.histories for h in level]
    F = np.zeros((1 + len(hs), seqs.n))
    F[0, 0] = 1.0
    for i, h in enumerate(hs, start=1):
        F[i, seqs.parent_seq(table, h)] = -1.0
        for a in range(A):
            F[i, seqs.index[(h, a)]] = 1.0
    return F


def _plan_to_behavioral(model: PosgModel, seqs: _Sequences, x: np.ndarray) -> BehavioralStrategy:
    A = model.n_actions(seqs.player)
    rules = []
    for t, hs in enumerate(seqs.histories):
        probs = np.full((len(hs), A), 1.0 / A)
        for i, h in enumerate(hs):
            row = np.array([max(x[seqs.index[(h, a)]], 0.0) for a in range(A)])
            if row.sum() > 1e-12:
                probs[i] = row / row.sum()
        rules.append(DecisionRule(seqs.player, t, A, np.array(hs, np.int64), probs))
    return BehavioralStrategy(seqs.player, 0, tuple(rules))


def _solve_sequence_form(pay: np.ndarray, E: np.ndarray, F: np.ndarray):
    """``max_x min_y x' pay y`` over realization plans, as
    ``max f.q s.t. F'q - pay'x <= 0, E x = e, x >= 0``."""
    nx, nq = pay.shape[0], F.shape[0]
    c = np.concatenate([np.zeros(nx), np.eye(1, nq).ravel()])
    A_ub = np.hstack([-pay.T, F.T])
    A_eq = np.hstack([E, np.zeros((E.shape[0], nq))])
    e = np.eye(1, E.shape[0]).ravel()
    res = lp_backend(c, A_ub, np.zeros(pay.shape[1]), A_eq, e, free=tuple(range(nx, nx + nq)))
    return res.objective, res.x[:nx]


def sflp_oracle(model: PosgModel) -> tuple[float, BehavioralStrategy, BehavioralStrategy]:
    """Equilibrium value and strategies from the sequence-form LP."""
    s1, s2 = _sequences(model, 1), _sequences(model, 2)
    pay = _sequence_payoff(model, s1, s2)
    E, F = _constraints(model, s1), _constraints(model, s2)
    v1, x = _solve_sequence_form(pay, E, F)
    v2, y = _solve_sequence_form(-pay.T, F, E)
    if abs(v1 + v2) > 1e-7 * max(1.0, abs(v1)):
        raise RuntimeError(f"sequence-form values disagree: {v1!r} vs {-v2!r}")
    return v1, _plan_to_behavioral(model, s1, x), _plan_to_behavioral(model, s2, y)


# brute force over pure plans

def _obs_sequences(n_obs: int, horizon: int) -> list[tuple[int, ...]]:
    return [seq for t in range(horizon) for seq in itertools.product(range(n_obs), repeat=t)]


def _pure_plans(model: PosgModel, player: int) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Every map from own observation sequences to actions; with deterministic
    own play, the observations alone identify the history."""
    A = model.n_actions(player)
    seqs = _obs_sequences(model.n_obs(player), model.horizon)
    count = A ** len(seqs)
    if count > BRUTE_MAX_PLANS:
        raise OracleSizeError(f"player {player} has {count} pure plans (limit {BRUTE_MAX_PLANS})")
    plans = np.array(list(itertools.product(range(A), repeat=len(seqs))), np.int64)
    return seqs, plans.reshape(count, len(seqs))


def brute_force_nev(model: PosgModel) -> float:
    """Equilibrium value of the normal-form game over pure plans."""
    seqs1, plans1 = _pure_plans(model, 1)
    seqs2, plans2 = _pure_plans(model, 2)
    col1 = {s: i for i, s in enumerate(seqs1)}
    col2 = {s: i for i, s in enumerate(seqs2)}
    n1, n2, S = len(plans1), len(plans2), model.n_states
    pay = np.zeros((n1, n2))
    alpha = {((), ()): np.broadcast_to(model.b0, (n1, n2, S)).copy()}
    for t in range(model.horizon):
        g = model.discount ** t
        nxt: dict = {}
        for (o1, o2), al in alpha.items():
            a1 = plans1[:, col1[o1]]
            a2 = plans2[:, col2[o2]]
            r = model.reward[:, a1][:, :, a2]              # (S, n1, n2)
            pay += g * np.einsum("pqs,spq->pq", al, r)
            if t + 1 == model.horizon:
                continue
            P = model.trans[:, a1][:, :, a2]               # (S, n1, n2, S2, Z1, Z2)
            flow = np.einsum("pqs,spqtxy->pqtxy", al, P)
            for z1 in range(model.n_obs(1)):
                for z2 in range(model.n_obs(2)):
                    f = flow[:, :, :, z1, z2]
                    if np.any(f):
                        nxt[(o1 + (z1,), o2 + (z2,))] = f
        alpha = nxt
    return matrix_game_value(pay)[0]
