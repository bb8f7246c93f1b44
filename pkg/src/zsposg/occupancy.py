"""Occupancy states: distributions over joint action-observation histories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (NUMERIC, UNREACHABLE, DecisionRule, PosgModel, filter_belief,
                    registry)

KEY_BASE = 1 << 31


def encode(own: np.ndarray, other: np.ndarray) -> np.ndarray:
    return np.asarray(own, np.int64) * KEY_BASE + np.asarray(other, np.int64)


def _segments(sorted_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique values of a sorted array and the start offset of each run."""
    if len(sorted_ids) == 0:
        return sorted_ids.copy(), np.zeros(1, np.int64)
    cut = np.flatnonzero(np.diff(sorted_ids)) + 1
    starts = np.concatenate(([0], cut, [len(sorted_ids)])).astype(np.int64)
    return sorted_ids[starts[:-1]], starts


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class OccupancyState:
    model: PosgModel
    step: int
    h1: np.ndarray
    h2: np.ndarray
    p: np.ndarray
    jidx: np.ndarray

    def __post_init__(self):
        h1 = np.asarray(self.h1, np.int64)
        h2 = np.asarray(self.h2, np.int64)
        p = np.asarray(self.p, float)
        jidx = np.asarray(self.jidx, np.int64)
        order = np.lexsort((h2, h1))
        h1, h2, p, jidx = h1[order], h2[order], p[order], jidx[order]
        _freeze(h1, h2, p, jidx)
        for name, val in (("h1", h1), ("h2", h2), ("p", p), ("jidx", jidx)):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.p)

    @property
    def beliefs(self) -> np.ndarray:
        return registry(self.model).belief[self.jidx]

    def own(self, player: int) -> tuple[np.ndarray, np.ndarray]:
        return (self.h1, self.h2) if player == 1 else (self.h2, self.h1)

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(x) for a, b, x in zip(self.h1, self.h2, self.p)}

    def mass(self) -> float:
        return float(self.p.sum())


@dataclass(frozen=True, eq=False)
class Marginal:
    player: int
    step: int
    ids: np.ndarray
    probs: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return {int(h): float(x) for h, x in zip(self.ids, self.probs)}


@dataclass(frozen=True, eq=False)
class Conditional:
    """Rows ``c(other | own)`` stored flat and sorted by ``(own, other)``."""

    player: int
    step: int
    own: np.ndarray
    other: np.ndarray
    prob: np.ndarray
    jidx: np.ndarray

    def __post_init__(self):
        own = np.asarray(self.own, np.int64)
        other = np.asarray(self.other, np.int64)
        prob = np.asarray(self.prob, float)
        jidx = np.asarray(self.jidx, np.int64)
        order = np.lexsort((other, own))
        own, other, prob, jidx = own[order], other[order], prob[order], jidx[order]
        rows, starts = _segments(own)
        keys = encode(own, other)
        _freeze(own, other, prob, jidx, rows, starts, keys)
        for name, val in (("own", own), ("other", other), ("prob", prob), ("jidx", jidx)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "keys", keys)

    def row(self, h: int) -> dict[int, float]:
        i = np.searchsorted(self.rows, h)
        if i == len(self.rows) or self.rows[i] != h:
            return {}
        lo, hi = self.starts[i], self.starts[i + 1]
        return {int(o): float(x) for o, x in zip(self.other[lo:hi], self.prob[lo:hi])}

    def has_rows(self, hs) -> np.ndarray:
        hs = np.asarray(hs, np.int64)
        if len(self.rows) == 0:
            return np.zeros(len(hs), bool)
        pos = np.minimum(np.searchsorted(self.rows, hs), len(self.rows) - 1)
        return self.rows[pos] == hs


def make_occupancy(model: PosgModel, step: int, entries: dict) -> OccupancyState:
    """Build an occupancy state from ``{(aoh1, aoh2): p}`` with tuple histories.

    Zero entries are dropped; the rest must be reachable and sum to 1.
    """
    reg = registry(model)
    t1, t2 = reg.table(1), reg.table(2)
    h1, h2, p = [], [], []
    for (a, b), x in entries.items():
        if x <= 0:
            continue
        i, j = t1.intern(a), t2.intern(b)
        if t1.length[i] != step or t2.length[j] != step:
            raise ValueError("occupancy entries must have histories of length step")
        h1.append(i)
        h2.append(j)
        p.append(float(x))
    p = np.asarray(p)
    if abs(p.sum() - 1.0) > NUMERIC.validate_tol:
        raise ValueError(f"occupancy mass {p.sum():.12g} differs from 1")
    jidx = reg.joints(h1, h2)
    if np.any(jidx < 0):
        raise ValueError("occupancy puts mass on an unreachable joint history")
    return OccupancyState(model, step, np.array(h1), np.array(h2), p, jidx)


def initial_occupancy(model: PosgModel) -> OccupancyState:
    registry(model)
    return OccupancyState(model, 0, np.zeros(1, np.int64), np.zeros(1, np.int64),
                          np.ones(1), np.zeros(1, np.int64))


def _check_step(occ: OccupancyState, rule: DecisionRule, player: int):
    if rule.player != player or rule.step != occ.step:
        raise ValueError(f"decision rule (player {rule.player}, step {rule.step}) does not "
                         f"apply to player {player} at step {occ.step}")


def _joint_mass(occ: OccupancyState, beta1: DecisionRule, beta2: DecisionRule) -> np.ndarray:
    _check_step(occ, beta1, 1)
    _check_step(occ, beta2, 2)
    b1 = beta1.lookup(occ.h1, strict=True)
    b2 = beta2.lookup(occ.h2, strict=True)
    q = registry(occ.model).q[occ.jidx]
    return (occ.p[:, None, None, None, None] * b1[:, :, None, None, None]
            * b2[:, None, :, None, None] * q)


def transition(occ: OccupancyState, beta1: DecisionRule, beta2: DecisionRule) -> OccupancyState:
    """Next occupancy state under the decision-rule profile ``(beta1, beta2)``."""
    model = occ.model
    if occ.step >= model.horizon - 1:
        raise ValueError("no transition out of the last step")
    mass = _joint_mass(occ, beta1, beta2)
    reg = registry(model)
    t1, t2 = reg.table(1), reg.table(2)
    keep = np.argwhere(mass >= NUMERIC.prune_eps)
    h1 = np.empty(len(keep), np.int64)
    h2 = np.empty(len(keep), np.int64)
    p = np.empty(len(keep))
    for k, (e, a1, a2, z1, z2) in enumerate(keep):
        h1[k] = t1.child(occ.h1[e], a1, z1)
        h2[k] = t2.child(occ.h2[e], a2, z2)
        p[k] = mass[e, a1, a2, z1, z2]
    jidx = reg.joints(h1, h2)
    live = jidx >= 0
    h1, h2, p, jidx = h1[live], h2[live], p[live], jidx[live]
    return OccupancyState(model, occ.step + 1, h1, h2, p / p.sum(), jidx)


def expected_reward(occ: OccupancyState, beta1: DecisionRule, beta2: DecisionRule) -> float:
    _check_step(occ, beta1, 1)
    _check_step(occ, beta2, 2)
    b1 = beta1.lookup(occ.h1, strict=True)
    b2 = beta2.lookup(occ.h2, strict=True)
    r = registry(occ.model).r[occ.jidx]
    return float(np.einsum("e,ea,eb,eab->", occ.p, b1, b2, r))


def decompose(occ: OccupancyState, player: int) -> tuple[Marginal, Conditional]:
    own, other = occ.own(player)
    order = np.lexsort((other, own))
    own_s, other_s, p_s, j_s = own[order], other[order], occ.p[order], occ.jidx[order]
    rows, starts = _segments(own_s)
    m = np.add.reduceat(p_s, starts[:-1]) if len(p_s) else np.zeros(0)
    seg = np.repeat(np.arange(len(rows)), np.diff(starts))
    cond = Conditional(player, occ.step, own_s, other_s, p_s / m[seg], j_s)
    return Marginal(player, occ.step, rows, m), cond


def recompose(marginal: Marginal, cond: Conditional) -> dict[tuple[int, int], float]:
    """``m(own) * c(other | own)`` keyed as ``(h1, h2)``."""
    mm = marginal.as_dict()
    out = {}
    for a, b, x in zip(cond.own, cond.other, cond.prob):
        key = (int(a), int(b)) if cond.player == 1 else (int(b), int(a))
        out[key] = mm.get(int(a), 0.0) * float(x)
    return out


def joint_data(model: PosgModel, jidx: np.ndarray, player: int):
    """``(q, r)`` gathered for joint indices with axes ordered (own, other)."""
    reg = registry(model)
    q = reg.q[jidx]
    r = reg.r[jidx]
    if player == 2:
        q = q.transpose(0, 2, 1, 4, 3)
        r = r.transpose(0, 2, 1)
    return q, r


def advance_conditional(model: PosgModel, cond: Conditional, rule_other: DecisionRule) -> Conditional:
    """Conditional term one step ahead, for every child ``(own, a, z)`` whose
    observation has positive probability.

    Only the opponent's rule is needed: the conditional term does not depend
    on the owner's own decision rule nor on the marginal.
    """
    player = cond.player
    other_player = 3 - player
    _check_step_cond(cond, rule_other, other_player)
    reg = registry(model)
    tme, tot = reg.table(player), reg.table(other_player)
    q, _ = joint_data(model, cond.jidx, player)
    bo = rule_other.lookup(cond.other, strict=True)
    x = cond.prob[:, None, None, None, None] * bo[:, None, :, None, None] * q
    seg = np.repeat(np.arange(len(cond.rows)), np.diff(cond.starts))
    # normalizer per (row, a_me, z_me)
    tot_mass = np.zeros((len(cond.rows),) + x.shape[1:2] + x.shape[3:4])
    np.add.at(tot_mass, seg, x.sum(axis=(2, 4)))
    keep = np.argwhere(x > 0)
    own = np.empty(len(keep), np.int64)
    other = np.empty(len(keep), np.int64)
    prob = np.empty(len(keep))
    for k, (e, am, ao, zm, zo) in enumerate(keep):
        own[k] = tme.child(cond.own[e], am, zm)
        other[k] = tot.child(cond.other[e], ao, zo)
        prob[k] = x[e, am, ao, zm, zo] / tot_mass[seg[e], am, zm]
    small = prob < NUMERIC.prune_eps
    own, other, prob = own[~small], other[~small], prob[~small]
    h1, h2 = (own, other) if player == 1 else (other, own)
    jidx = reg.joints(h1, h2)
    live = jidx >= 0
    own, other, prob, jidx = own[live], other[live], prob[live], jidx[live]
    # renormalize rows after pruning
    order = np.lexsort((other, own))
    own, other, prob, jidx = own[order], other[order], prob[order], jidx[order]
    rows, starts = _segments(own)
    sums = np.add.reduceat(prob, starts[:-1]) if len(prob) else np.zeros(0)
    prob = prob / np.repeat(sums, np.diff(starts))
    return Conditional(player, cond.step + 1, own, other, prob, jidx)


def _check_step_cond(cond: Conditional, rule: DecisionRule, player: int):
    if rule.player != player or rule.step != cond.step:
        raise ValueError(f"decision rule (player {rule.player}, step {rule.step}) does not "
                         f"apply to player {player} at step {cond.step}")


def transition_conditional(occ: OccupancyState, beta1: DecisionRule, beta2: DecisionRule,
                           player: int, extended: bool = False) -> Conditional:
    """Conditional term of the next occupancy state, built from the current
    conditional and the opponent rule only.

    With ``extended`` the rows cover every observable child, including those
    reached through actions the owner plays with probability zero.
    """
    other_rule = beta2 if player == 1 else beta1
    _, cond = decompose(occ, player)
    nxt = advance_conditional(occ.model, cond, other_rule)
    if extended:
        return nxt
    marg = transition_marginal(occ, beta1, beta2, player)
    keep = np.isin(nxt.own, marg.ids)
    return Conditional(player, nxt.step, nxt.own[keep], nxt.other[keep], nxt.prob[keep],
                       nxt.jidx[keep])


def transition_marginal(occ: OccupancyState, beta1: DecisionRule, beta2: DecisionRule,
                        player: int) -> Marginal:
    """Marginal term of the next occupancy state.

    Computed as ``m(h) * beta(a|h) * Pr(z | h, a)`` where the observation
    probability comes from the conditional term and the opponent rule.
    """
    own_rule = beta1 if player == 1 else beta2
    other_rule = beta2 if player == 1 else beta1
    marg, cond = decompose(occ, player)
    q, _ = joint_data(occ.model, cond.jidx, player)
    bo = other_rule.lookup(cond.other, strict=True)
    pz = np.einsum("e,eb,eabyz->eay", cond.prob, bo, q)
    seg = np.repeat(np.arange(len(cond.rows)), np.diff(cond.starts))
    obs = np.zeros((len(cond.rows),) + pz.shape[1:])
    np.add.at(obs, seg, pz)
    bm = own_rule.lookup(marg.ids, strict=True)
    mass = marg.probs[:, None, None] * bm[:, :, None] * obs
    table = registry(occ.model).table(player)
    ids, probs = [], []
    for i, a, z in np.argwhere(mass > 0):
        ids.append(table.child(marg.ids[i], a, z))
        probs.append(mass[i, a, z])
    ids = np.asarray(ids, np.int64)
    probs = np.asarray(probs)
    order = np.argsort(ids)
    return Marginal(player, occ.step + 1, ids[order], probs[order] / probs.sum())


def l1_distance(a: OccupancyState, b: OccupancyState) -> float:
    if a.step != b.step:
        raise ValueError("occupancy states from different steps")
    ka, kb = encode(a.h1, a.h2), encode(b.h1, b.h2)
    keys = np.union1d(ka, kb)
    va = np.zeros(len(keys))
    vb = np.zeros(len(keys))
    va[np.searchsorted(keys, ka)] = a.p
    vb[np.searchsorted(keys, kb)] = b.p
    return float(np.abs(va - vb).sum())


def conditional_row_l1(c: Conditional, d: Conditional) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise l1 distance over the union of rows; absent entries count as 0."""
    keys = np.union1d(c.keys, d.keys)
    vc = np.zeros(len(keys))
    vd = np.zeros(len(keys))
    vc[np.searchsorted(keys, c.keys)] = c.prob
    vd[np.searchsorted(keys, d.keys)] = d.prob
    rows, starts = _segments(keys // KEY_BASE)
    diff = np.abs(vc - vd)
    dist = np.add.reduceat(diff, starts[:-1]) if len(diff) else np.zeros(0)
    return rows, dist


def occupancy_to_json(occ: OccupancyState) -> dict:
    reg = registry(occ.model)
    t1, t2 = reg.table(1), reg.table(2)
    beliefs = occ.beliefs
    return {
        "step": occ.step,
        "entries": [
            {"aoh1": t1.to_string(int(a)), "aoh2": t2.to_string(int(b)), "p": float(x),
             "belief": [float(v) for v in bel]}
            for a, b, x, bel in zip(occ.h1, occ.h2, occ.p, beliefs)
        ],
    }


def occupancy_from_json(model: PosgModel, data: dict) -> OccupancyState:
    reg = registry(model)
    t1, t2 = reg.table(1), reg.table(2)
    entries = {}
    for e in data["entries"]:
        a = t1.entries(t1.from_string(e["aoh1"]))
        b = t2.entries(t2.from_string(e["aoh2"]))
        entries[(a, b)] = float(e["p"])
    return make_occupancy(model, int(data["step"]), entries)


def check_beliefs(occ: OccupancyState, tol: float = NUMERIC.identity_tol) -> bool:
    """Compare cached beliefs against a fresh filtering pass."""
    reg = registry(occ.model)
    t1, t2 = reg.table(1), reg.table(2)
    for a, b, bel in zip(occ.h1, occ.h2, occ.beliefs):
        ref = filter_belief(occ.model, (t1.entries(int(a)), t2.entries(int(b))))
        if ref is UNREACHABLE or np.max(np.abs(ref - bel)) > tol:
            return False
    return True
