"""Upper and lower value bounds as sets of Lipschitz-generalizing tuples.

Both bounds share one code path.  A ``BoundSide`` looks at the game from the
point of view of a maximizing player ``me`` whose payoff is ``sign * r``: the
upper bound is the side with ``me = 1, sign = +1`` and the lower bound is the
side with ``me = 2, sign = -1``, whose values are negated on the way out.
Inside a side, every stored vector is an upper bound on ``me``'s
best-response value against a stored strategy of the opponent.

Value tuples (``VTuple``) give ``V(occ) = min_j m . nu_j + lam * ||occ - m c_j||``
and stage tuples (``WTuple``) give the matrix-game columns used to pick
decision rules and to back values up.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import DecisionRule, PosgModel, horizon_weight, registry
from .occupancy import (KEY_BASE, Conditional, OccupancyState, advance_conditional,
                        decompose, joint_data, transition)
from .strategy import TreeNode, TreeStrategy


@dataclass(frozen=True)
class LipschitzSchedule:
    lambdas: np.ndarray
    mode: str

    @classmethod
    def for_model(cls, model: PosgModel, mode: str = "paper") -> "LipschitzSchedule":
        H, g = model.horizon, model.discount
        spread = model.r_max - model.r_min
        if mode == "theorem":
            lams = [0.5 * horizon_weight(H, t, g) * spread for t in range(H + 1)]
        elif mode == "paper":
            lams = [(H - t) * spread for t in range(H + 1)]
        else:
            raise ValueError(f"unknown Lipschitz mode {mode!r}")
        arr = np.asarray(lams, float)
        arr.flags.writeable = False
        return cls(arr, mode)

    def __getitem__(self, tau: int) -> float:
        return float(self.lambdas[tau])


def _nu_lookup(ids: np.ndarray | None, vals: np.ndarray | None, query: np.ndarray,
               fallback: float) -> np.ndarray:
    out = np.full(query.shape, fallback, dtype=float)
    if ids is None or len(ids) == 0:
        return out
    flat = query.reshape(-1)
    pos = np.minimum(np.searchsorted(ids, flat), len(ids) - 1)
    hit = ids[pos] == flat
    res = out.reshape(-1)
    res[hit] = vals[pos[hit]]
    return res.reshape(query.shape)


def _sorted_nu(ids, vals):
    ids = np.asarray(ids, np.int64)
    vals = np.asarray(vals, float)
    order = np.argsort(ids)
    ids, vals = ids[order], vals[order]
    ids.flags.writeable = False
    vals.flags.writeable = False
    return ids, vals


@dataclass(eq=False)
class WTuple:
    """Stage tuple: anchor conditional, opponent node (rule plus child tree)
    and the successor bound vector (absent at the last step)."""

    anchor: Conditional
    node: TreeNode
    nu_ids: np.ndarray | None = None
    nu_vals: np.ndarray | None = None

    def __post_init__(self):
        if self.nu_ids is not None:
            self.nu_ids, self.nu_vals = _sorted_nu(self.nu_ids, self.nu_vals)

    @property
    def rule(self) -> DecisionRule:
        return self.node.rule

    @property
    def psi_next(self) -> TreeStrategy | None:
        return self.node.child


@dataclass(eq=False)
class VTuple:
    """Value tuple: anchor conditional, bound vector over own histories and
    the opponent tree strategy it was computed against."""

    anchor: Conditional
    nu_ids: np.ndarray
    nu_vals: np.ndarray
    psi: TreeStrategy

    def __post_init__(self):
        self.nu_ids, self.nu_vals = _sorted_nu(self.nu_ids, self.nu_vals)

    def nu(self, hs, fallback: float) -> np.ndarray:
        return _nu_lookup(self.nu_ids, self.nu_vals, np.asarray(hs, np.int64), fallback)


@dataclass(frozen=True)
class Backup:
    """New bound vector at some step together with the tree it bounds."""

    anchor: Conditional
    nu_ids: np.ndarray
    nu_vals: np.ndarray
    psi: TreeStrategy
    source: str = "lp"


@dataclass(eq=False)
class Probe:
    """Per-conditional data reused across all tuples of a step."""

    cond: Conditional
    children: np.ndarray
    key: tuple

    @property
    def rows(self) -> np.ndarray:
        return self.cond.rows


@dataclass(eq=False)
class BoundSide:
    model: PosgModel
    me: int
    sign: float
    lipschitz: LipschitzSchedule
    gamma_penalty: bool = True
    J: list[list[VTuple]] = field(default_factory=list)
    W: list[list[WTuple]] = field(default_factory=list)

    def __post_init__(self):
        H = self.model.horizon
        if not self.J:
            self.J = [[] for _ in range(H)]
            self.W = [[] for _ in range(H)]
        self._cache: OrderedDict = OrderedDict()

    @property
    def opp(self) -> int:
        return 3 - self.me

    @property
    def best_reward(self) -> float:
        m = self.model
        return m.r_max if self.sign > 0 else -m.r_min

    def fallback(self, tau: int) -> float:
        """Value bound valid for any history and conditional at ``tau``."""
        m = self.model
        return self.best_reward * horizon_weight(m.horizon, tau, m.discount)

    # probes and caching

    def probe(self, cond: Conditional) -> Probe:
        table = registry(self.model).table(self.me)
        key = (cond.step, cond.keys.tobytes(), cond.prob.tobytes())
        return Probe(cond, table.children(cond.rows), key)

    def probe_occ(self, occ: OccupancyState):
        marg, cond = decompose(occ, self.me)
        return marg.probs, self.probe(cond)

    def _cached(self, kind: str, probe: Probe, items: list, compute) -> list:
        key = (kind, probe.key)
        done = self._cache.get(key)
        if done is None:
            done = []
        else:
            self._cache.move_to_end(key)
        for item in items[len(done):]:
            done.append(compute(item))
        self._cache[key] = done
        while len(self._cache) > 256:
            self._cache.popitem(last=False)
        return done

    def _union(self, probe: Probe, anchor: Conditional):
        """Entries of probe and anchor restricted to the probe's rows."""
        cond = probe.cond
        mask = np.isin(anchor.own, cond.rows)
        ka = anchor.keys[mask]
        keys = np.union1d(cond.keys, ka)
        ip = np.searchsorted(keys, cond.keys)
        ia = np.searchsorted(keys, ka)
        cval = np.zeros(len(keys))
        ctval = np.zeros(len(keys))
        jidx = np.empty(len(keys), np.int64)
        cval[ip] = cond.prob
        ctval[ia] = anchor.prob[mask]
        jidx[ip] = cond.jidx
        jidx[ia] = anchor.jidx[mask]
        seg = np.searchsorted(cond.rows, keys // KEY_BASE)
        return keys, seg, cval, ctval, jidx

    # value tuples

    def _row_terms(self, probe: Probe, tau: int, tup: VTuple) -> np.ndarray:
        """Per-row ``nu(h) + lam * ||c(.|h) - c_j(.|h)||``."""
        keys, seg, cval, ctval, _ = self._union(probe, tup.anchor)
        dist = np.zeros(len(probe.rows))
        np.add.at(dist, seg, np.abs(cval - ctval))
        dist = np.where(tup.anchor.has_rows(probe.rows), dist, 2.0)
        nu = tup.nu(probe.rows, self.fallback(tau))
        return nu + self.lipschitz[tau] * dist

    def row_terms(self, probe: Probe, tau: int) -> np.ndarray:
        """Matrix ``(len(J_tau), rows)`` of per-row bound terms."""
        terms = self._cached(("v", tau), probe, self.J[tau],
                             lambda t: self._row_terms(probe, tau, t))
        return np.array(terms)

    def value(self, occ: OccupancyState) -> tuple[float, int]:
        """Side value at ``occ`` and the index of the minimizing tuple."""
        tau = occ.step
        if not self.J[tau]:
            raise ValueError(f"no value tuples at step {tau}")
        m, probe = self.probe_occ(occ)
        vals = self.row_terms(probe, tau) @ m
        j = int(np.argmin(vals))
        return float(vals[j]), j

    # stage tuples

    def _column(self, probe: Probe, tau: int, tup: WTuple) -> np.ndarray:
        H = self.model.horizon
        gamma = self.model.discount
        terminal = tau == H - 1
        keys, seg, cval, ctval, jidx = self._union(probe, tup.anchor)
        q, r = joint_data(self.model, jidx, self.me)
        r = self.sign * r
        b2 = tup.rule.lookup(keys % KEY_BASE)
        if terminal:
            nu = np.zeros(probe.children.shape)
            pen = 0.0
        else:
            nu = _nu_lookup(tup.nu_ids, tup.nu_vals, probe.children, self.fallback(tau + 1))
            lam = self.lipschitz[tau + 1]
            pen = gamma * lam if self.gamma_penalty else lam
        return _kernels.column_payoffs(seg, len(probe.rows), cval, ctval, b2, q, r, nu,
                                       gamma, pen, terminal)

    def columns(self, probe: Probe, tau: int, tuples: list[WTuple] | None = None) -> np.ndarray:
        """Conditional payoffs ``Mc[row, a, w]`` for the stage tuples at ``tau``."""
        tuples = self.W[tau] if tuples is None else tuples
        if tuples is self.W[tau]:
            cols = self._cached(("w", tau), probe, tuples,
                                lambda t: self._column(probe, tau, t))
        else:
            cols = [self._column(probe, tau, t) for t in tuples]
        A = self.model.n_actions(self.me)
        if not cols:
            return np.zeros((len(probe.rows), A, 0))
        return np.stack(cols, axis=2)

    def w_value(self, occ: OccupancyState, rule_me: DecisionRule) -> float:
        tau = occ.step
        if not self.W[tau]:
            raise ValueError(f"no stage tuples at step {tau}")
        m, probe = self.probe_occ(occ)
        mc = self.columns(probe, tau)
        beta = rule_me.lookup(probe.rows)
        return float(np.min(np.einsum("g,ga,gaw->w", m, beta, mc)))

    # growth

    def add_terminal(self, occ: OccupancyState, rule_opp: DecisionRule) -> WTuple:
        tau = occ.step
        if tau != self.model.horizon - 1:
            raise ValueError("terminal tuples belong to the last step")
        _, cond = decompose(occ, self.me)
        tup = WTuple(cond, TreeNode(self.opp, tau, rule_opp, None))
        self.W[tau].append(tup)
        return tup

    def update(self, tau: int, occ_prev: OccupancyState | None, rule_opp_prev: DecisionRule | None,
               backup: Backup) -> tuple[WTuple | None, VTuple]:
        """Store a backup made at step ``tau``: a value tuple at ``tau`` and,
        for ``tau > 0``, a stage tuple at ``tau - 1``."""
        if not 0 <= tau < self.model.horizon:
            raise ValueError(f"step {tau} out of range")
        w = None
        if tau > 0:
            if occ_prev is None or occ_prev.step != tau - 1:
                raise ValueError("previous occupancy state must sit one step earlier")
            _, cond_prev = decompose(occ_prev, self.me)
            node = TreeNode(self.opp, tau - 1, rule_opp_prev, backup.psi)
            w = WTuple(cond_prev, node, backup.nu_ids, backup.nu_vals)
            self.W[tau - 1].append(w)
        v = VTuple(backup.anchor, backup.nu_ids, backup.nu_vals, backup.psi)
        self.J[tau].append(v)
        return w, v

    def sizes(self) -> dict[str, list[int]]:
        return {"J": [len(x) for x in self.J], "W": [len(x) for x in self.W]}


@dataclass(eq=False)
class BoundSets:
    model: PosgModel
    lipschitz: LipschitzSchedule
    upper: BoundSide
    lower: BoundSide

    def side(self, player: int) -> BoundSide:
        """The side whose maximizing player is ``player``."""
        return self.upper if player == 1 else self.lower

    def upper_v(self, occ: OccupancyState) -> float:
        return self.upper.value(occ)[0]

    def lower_v(self, occ: OccupancyState) -> float:
        return -self.lower.value(occ)[0]

    def upper_w_value(self, occ: OccupancyState, beta1: DecisionRule) -> float:
        return self.upper.w_value(occ, beta1)

    def lower_w_value(self, occ: OccupancyState, beta2: DecisionRule) -> float:
        return -self.lower.w_value(occ, beta2)

    def update_after_step(self, tau: int, occ_prev: OccupancyState | None,
                          rule_opp_prev: DecisionRule | None, occ: OccupancyState,
                          backup: Backup, player: int = 1):
        """Append the tuples of one backup made at ``occ`` (step ``tau``) to
        the side maximized by ``player``."""
        if occ.step != tau:
            raise ValueError("occupancy state does not sit at the given step")
        return self.side(player).update(tau, occ_prev, rule_opp_prev, backup)

    def sizes(self) -> dict:
        return {"upper": self.upper.sizes(), "lower": self.lower.sizes()}


def uniform_trajectory(model: PosgModel) -> list[OccupancyState]:
    from .occupancy import initial_occupancy
    occs = [initial_occupancy(model)]
    for t in range(model.horizon - 1):
        occs.append(transition(occs[-1], DecisionRule.uniform(1, t, model.n_actions(1)),
                               DecisionRule.uniform(2, t, model.n_actions(2))))
    return occs


def init_bounds(model: PosgModel, lipschitz: LipschitzSchedule | str = "paper",
                gamma_penalty: bool = True) -> BoundSets:
    """Initial bounds from a forward pass under uniform rules.

    Every stored vector holds the trivial bound ``best_reward * h(H, tau)``;
    the opponent trees chain uniform rules down to the last step.
    """
    if isinstance(lipschitz, str):
        lipschitz = LipschitzSchedule.for_model(model, lipschitz)
    H = model.horizon
    occs = uniform_trajectory(model)
    sides = []
    for me, sign in ((1, 1.0), (2, -1.0)):
        side = BoundSide(model, me, sign, lipschitz, gamma_penalty)
        opp = side.opp
        A_opp = model.n_actions(opp)
        conds = [decompose(o, me)[1] for o in occs]
        child = None
        for tau in range(H - 1, -1, -1):
            uni = DecisionRule.uniform(opp, tau, A_opp)
            node = TreeNode(opp, tau, uni, child)
            if tau == H - 1:
                w = WTuple(conds[tau], node)
            else:
                nxt = advance_conditional(model, conds[tau], uni)
                w = WTuple(conds[tau], node, nxt.rows,
                           np.full(len(nxt.rows), side.fallback(tau + 1)))
            side.W[tau].append(w)
            psi = TreeStrategy.dirac(node)
            side.J[tau].append(VTuple(conds[tau], conds[tau].rows,
                                      np.full(len(conds[tau].rows), side.fallback(tau)), psi))
            child = psi
        sides.append(side)
    return BoundSets(model, lipschitz, sides[0], sides[1])


def _cond_json(model: PosgModel, cond: Conditional) -> dict:
    reg = registry(model)
    tme, tot = reg.table(cond.player), reg.table(3 - cond.player)
    return {"player": cond.player, "step": cond.step,
            "entries": [[tme.to_string(int(a)), tot.to_string(int(b)), float(p)]
                        for a, b, p in zip(cond.own, cond.other, cond.prob)]}


def _cond_from_json(model: PosgModel, data: dict) -> Conditional:
    reg = registry(model)
    player = int(data["player"])
    tme, tot = reg.table(player), reg.table(3 - player)
    own = np.array([tme.from_string(e[0]) for e in data["entries"]], np.int64)
    other = np.array([tot.from_string(e[1]) for e in data["entries"]], np.int64)
    prob = np.array([float(e[2]) for e in data["entries"]])
    h1, h2 = (own, other) if player == 1 else (other, own)
    return Conditional(player, int(data["step"]), own, other, prob, reg.joints(h1, h2))


def bounds_to_json(bounds: BoundSets) -> dict:
    """Snapshot of both sides; trees are stored once in a shared node table."""
    from .strategy import tree_to_json
    model = bounds.model
    out = {"horizon": model.horizon, "lipschitz": {"mode": bounds.lipschitz.mode,
           "lambdas": [float(x) for x in bounds.lipschitz.lambdas]}, "sides": []}
    for side in (bounds.upper, bounds.lower):
        tme = registry(model).table(side.me)
        nu = lambda ids, vals: None if ids is None else {
            tme.to_string(int(h)): float(v) for h, v in zip(ids, vals)}
        out["sides"].append({
            "me": side.me, "sign": side.sign, "gamma_penalty": side.gamma_penalty,
            "W": [[{"anchor": _cond_json(model, w.anchor), "nu": nu(w.nu_ids, w.nu_vals),
                    "node": tree_to_json(model, TreeStrategy.dirac(w.node))}
                   for w in ws] for ws in side.W],
            "J": [[{"anchor": _cond_json(model, v.anchor), "nu": nu(v.nu_ids, v.nu_vals),
                    "psi": tree_to_json(model, v.psi)}
                   for v in vs] for vs in side.J],
        })
    return out


def bounds_from_json(model: PosgModel, data: dict) -> BoundSets:
    """Rebuild bound sets from a snapshot.  Shared tree nodes are duplicated,
    which changes memory use but not any value."""
    from .strategy import tree_from_json
    lips = LipschitzSchedule(np.asarray(data["lipschitz"]["lambdas"], float),
                             data["lipschitz"]["mode"])
    sides = []
    for sd in data["sides"]:
        side = BoundSide(model, int(sd["me"]), float(sd["sign"]), lips, bool(sd["gamma_penalty"]))
        tme = registry(model).table(side.me)

        def nu(d):
            if d is None:
                return None, None
            ids = [tme.from_string(k) for k in d]
            return np.array(ids, np.int64), np.array(list(d.values()), float)

        for tau, ws in enumerate(sd["W"]):
            for w in ws:
                node = tree_from_json(model, w["node"]).nodes[0]
                side.W[tau].append(WTuple(_cond_from_json(model, w["anchor"]), node, *nu(w["nu"])))
        for tau, vs in enumerate(sd["J"]):
            for v in vs:
                ids, vals = nu(v["nu"])
                side.J[tau].append(VTuple(_cond_from_json(model, v["anchor"]), ids, vals,
                                          tree_from_json(model, v["psi"])))
        sides.append(side)
    return BoundSets(model, lips, sides[0], sides[1])
