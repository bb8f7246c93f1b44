"""Matrix games behind the bound updates, and the LPs that solve them."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .bounds import BoundSide, WTuple
from .model import NUMERIC, DecisionRule, registry
from .occupancy import OccupancyState, joint_data


class LpError(RuntimeError):
    pass


class LpInfeasible(LpError):
    pass


class LpUnbounded(LpError):
    pass


class LpNumericalError(LpError):
    pass


@dataclass(frozen=True)
class LpResult:
    x: np.ndarray
    objective: float


def lp_backend(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, free=()) -> LpResult:
    """Maximize ``c . x`` s.t. ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    Indices listed in ``free`` are unbounded variables.
    """
    c = np.asarray(c, float)
    bounds = [(0.0, None)] * len(c)
    for i in free:
        bounds[i] = (None, None)
    for M in (A_ub, A_eq):
        if M is not None and not sparse.issparse(M) and not np.all(np.isfinite(M)):
            raise LpNumericalError("non-finite LP coefficient")
    res = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs",
                  options={"primal_feasibility_tolerance": NUMERIC.lp_tol,
                           "dual_feasibility_tolerance": NUMERIC.lp_tol})
    if res.status == 2:
        raise LpInfeasible(res.message)
    if res.status == 3:
        raise LpUnbounded(res.message)
    if res.status != 0 or res.x is None:
        raise LpNumericalError(f"LP solver status {res.status}: {res.message}")
    return LpResult(np.asarray(res.x), float(-res.fun))


@dataclass(frozen=True, eq=False)
class GameMatrix:
    """Rows are (own history, own action) pairs over the marginal's support,
    columns are stage tuples.  ``mc`` holds the payoffs conditioned on the row
    history and ``m`` its marginal probability, so ``M = m * mc``."""

    player: int
    step: int
    rows: np.ndarray
    m: np.ndarray
    mc: np.ndarray

    @property
    def n_actions(self) -> int:
        return self.mc.shape[1]

    @property
    def n_columns(self) -> int:
        return self.mc.shape[2]

    @property
    def values(self) -> np.ndarray:
        G, A, W = self.mc.shape
        return (self.m[:, None, None] * self.mc).reshape(G * A, W)


@dataclass(frozen=True, eq=False)
class LpSolution:
    value: float
    rule: DecisionRule | None = None
    mix: np.ndarray | None = None
    nu: np.ndarray | None = None


def build_matrix(occ: OccupancyState, side: BoundSide, tuples: list[WTuple] | None = None) -> GameMatrix:
    tau = occ.step
    tuples = side.W[tau] if tuples is None else tuples
    if not tuples:
        raise ValueError(f"no stage tuples at step {tau}")
    m, probe = side.probe_occ(occ)
    return GameMatrix(side.me, tau, probe.rows, m, side.columns(probe, tau, tuples))


def primal_solve(M: GameMatrix) -> LpSolution:
    """Greedy rule: ``max_beta min_w sum_{h,a} beta(a|h) M[(h,a), w]``."""
    G, A, W = M.mc.shape
    vals = M.values
    n = G * A
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-vals.T, np.ones((W, 1))])
    A_eq = np.zeros((G, n + 1))
    for g in range(G):
        A_eq[g, g * A:(g + 1) * A] = 1.0
    res = lp_backend(c, A_ub, np.zeros(W), A_eq, np.ones(G), free=(n,))
    beta = res.x[:n].reshape(G, A)
    rule = DecisionRule(M.player, M.step, A, M.rows, beta)
    return LpSolution(res.objective, rule=rule)


def nu_from_mix(mc: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Per-row ``max_a mc[h, a, :] . psi``."""
    return (mc @ psi).max(axis=1)


def dual_solve(M: GameMatrix) -> LpSolution:
    """Opponent mix over columns: ``min_psi sum_h max_a M[(h,a), :] . psi``.

    One value variable per row history keeps this the exact dual of the
    greedy LP when several histories share the marginal.
    """
    G, A, W = M.mc.shape
    vals = M.values
    c = np.concatenate([np.zeros(W), -np.ones(G)])
    A_ub = np.zeros((G * A, W + G))
    A_ub[:, :W] = vals
    A_ub[np.arange(G * A), W + np.repeat(np.arange(G), A)] = -1.0
    A_eq = np.concatenate([np.ones(W), np.zeros(G)])[None, :]
    res = lp_backend(c, A_ub, np.zeros(G * A), A_eq, np.ones(1), free=tuple(range(W, W + G)))
    psi = np.clip(res.x[:W], 0.0, None)
    psi /= psi.sum()
    return LpSolution(-res.objective, mix=psi, nu=nu_from_mix(M.mc, psi))


def solve_both(M: GameMatrix, tol: float = 1e-6) -> tuple[LpSolution, LpSolution]:
    """Primal and dual as two separate LPs, with an objective cross-check."""
    p = primal_solve(M)
    d = dual_solve(M)
    if abs(p.value - d.value) > tol * max(1.0, abs(p.value)):
        raise LpNumericalError(f"primal {p.value!r} and dual {d.value!r} disagree")
    return p, d


def _terminal_side(occ: OccupancyState, me: int, sign: float) -> tuple[DecisionRule, float]:
    model = occ.model
    other = 3 - me
    own, opp = occ.own(me)
    rows_me, inv_me = np.unique(own, return_inverse=True)
    rows_op, inv_op = np.unique(opp, return_inverse=True)
    Am, Ao = model.n_actions(me), model.n_actions(other)
    _, r = joint_data(model, occ.jidx, me)
    Gm, Go = len(rows_me), len(rows_op)
    n = Gm * Am
    # U(h_opp) <= sum_{h_me} sigma * sum_a beta(a|h_me) * sign * r  for all a_opp
    A_ub = np.zeros((Go * Ao, n + Go))
    coef = sign * occ.p[:, None, None] * r
    for e in range(len(occ.p)):
        for ao in range(Ao):
            A_ub[inv_op[e] * Ao + ao, inv_me[e] * Am:(inv_me[e] + 1) * Am] -= coef[e, :, ao]
    A_ub[np.arange(Go * Ao), n + np.repeat(np.arange(Go), Ao)] = 1.0
    A_eq = np.zeros((Gm, n + Go))
    for g in range(Gm):
        A_eq[g, g * Am:(g + 1) * Am] = 1.0
    c = np.concatenate([np.zeros(n), np.ones(Go)])
    res = lp_backend(c, A_ub, np.zeros(Go * Ao), A_eq, np.ones(Gm), free=tuple(range(n, n + Go)))
    rule = DecisionRule(me, occ.step, Am, rows_me, res.x[:n].reshape(Gm, Am))
    return rule, res.objective


def terminal_nes(occ: OccupancyState) -> tuple[DecisionRule, DecisionRule, float]:
    """Exact equilibrium of the one-shot Bayesian game at the last step."""
    if occ.step != occ.model.horizon - 1:
        raise ValueError("terminal game only exists at the last step")
    beta1, v1 = _terminal_side(occ, 1, 1.0)
    beta2, v2 = _terminal_side(occ, 2, -1.0)
    if abs(v1 + v2) > 1e-6 * max(1.0, abs(v1)):
        raise LpNumericalError(f"terminal game values {v1!r} and {-v2!r} disagree")
    return beta1, beta2, v1


def matrix_game_value(payoff: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Value and optimal mixed strategies of a row-maximizing matrix game."""
    payoff = np.asarray(payoff, float)
    n, k = payoff.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    rows = lp_backend(c, np.hstack([-payoff.T, np.ones((k, 1))]), np.zeros(k),
                      np.concatenate([np.ones(n), [0.0]])[None, :], np.ones(1), free=(n,))
    c = np.zeros(k + 1)
    c[-1] = -1.0
    cols = lp_backend(c, np.hstack([payoff, -np.ones((n, 1))]), np.zeros(n),
                      np.concatenate([np.ones(k), [0.0]])[None, :], np.ones(1), free=(k,))
    x = np.clip(rows.x[:n], 0, None)
    y = np.clip(cols.x[:k], 0, None)
    return rows.objective, x / x.sum(), y / y.sum()


def dump_matrix_csv(M: GameMatrix, path: str | Path, model) -> None:
    table = registry(model).table(M.player)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["aoh", "action"] + [f"w{j}" for j in range(M.n_columns)])
        vals = M.values
        for g, h in enumerate(M.rows):
            for a in range(M.n_actions):
                w.writerow([table.to_string(int(h)), a]
                           + [f"{v:.17g}" for v in vals[g * M.n_actions + a]])

