"""Heuristic search value iteration over occupancy states.

Each iteration runs one trajectory from the initial occupancy state.  At
every step the upper-bound matrix game picks player 1's rule and the
lower-bound game picks player 2's; the trajectory stops once the bound gap
falls below the depth-dependent threshold, or at the last step where the
one-shot game is solved exactly.  While backtracking, both bounds are backed
up at the successor state and stored as new tuples.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import Backup, BoundSets, BoundSide, init_bounds, LipschitzSchedule
from .games_lp import (GameMatrix, LpSolution, dual_solve, nu_from_mix, primal_solve,
                       solve_both, terminal_nes)
from .model import PosgModel, horizon_weight
from .occupancy import (Conditional, OccupancyState, advance_conditional, decompose,
                        initial_occupancy, transition)
from .strategy import TreeStrategy


class ConfigError(ValueError):
    pass


def thr(tau: int, eps: float, rho: float, lambdas, gamma: float) -> float:
    """Stopping threshold at depth ``tau``:
    ``gamma^-tau * eps - sum_{i=1..tau} 2 rho lam_{tau-i} gamma^-i``."""
    if tau == 0:
        return float(eps)
    if gamma == 0.0:
        return math.inf
    total = gamma ** (-tau) * eps
    for i in range(1, tau + 1):
        total -= 2.0 * rho * float(lambdas[tau - i]) * gamma ** (-i)
    return float(total)


def _lambda_inf(model: PosgModel) -> float:
    return 0.5 * (model.r_max - model.r_min) / (1.0 - model.discount)


def rho_max(model: PosgModel, eps: float, lipschitz: LipschitzSchedule,
            method: str = "auto") -> float:
    """Largest radius keeping every threshold positive.

    ``closed`` uses the closed forms derived for the theorem constant;
    ``generic`` solves ``thr(tau) > 0`` for each ``tau <= H-1`` with the
    configured constants; ``auto`` picks ``closed`` for the theorem schedule.
    """
    if eps <= 0:
        raise ConfigError("epsilon must be positive")
    if method == "auto":
        method = "closed" if lipschitz.mode == "theorem" else "generic"
    H, g = model.horizon, model.discount
    spread = model.r_max - model.r_min
    if method == "closed":
        if spread == 0:
            return math.inf
        if g == 1.0:
            return eps / (spread * (H + 1) * H)
        return (1.0 - g) * eps / (2.0 * _lambda_inf(model))
    if method != "generic":
        raise ConfigError(f"unknown radius method {method!r}")
    best = math.inf
    for tau in range(1, H):
        if g == 0.0:
            break
        denom = sum(2.0 * float(lipschitz.lambdas[tau - i]) * g ** (-i) for i in range(1, tau + 1))
        if denom > 0:
            best = min(best, g ** (-tau) * eps / denom)
    return best


def trajectory_cap(model: PosgModel, eps: float, rho: float) -> int:
    """Maximum trajectory length: ``H`` when undiscounted, else also bounded
    by the depth at which the threshold exceeds the initial width."""
    H, g = model.horizon, model.discount
    if g == 1.0:
        return H
    if g == 0.0:
        return min(H, 1)
    lam_inf = _lambda_inf(model)
    width = (model.r_max - model.r_min) * horizon_weight(H, 0, g)
    slack = 2.0 * rho * lam_inf / (1.0 - g)
    num, den = eps - slack, width - slack
    if num <= 0:
        raise ConfigError("radius too large for the trajectory bound")
    if den <= num:
        return min(H, 1)
    return min(H, max(1, math.ceil(math.log(num / den) / math.log(g))))


@dataclass
class SolverConfig:
    epsilon: float
    rho: float | str = "auto"
    lambda_mode: str = "paper"
    max_seconds: float | None = None
    max_iterations: int = 100_000
    eval_every: int | str | None = None
    seed: int = 0
    gamma_penalty: bool = True
    check_duality: bool = True
    rho_method: str = "auto"

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Backtrack:
    """Stage-bound gap at a visited (state, rule pair) right after its update."""

    tau: int
    w_gap: float
    gamma_thr_next: float
    gamma_gap_next: float
    child_status: str

    @property
    def ends_trajectory(self) -> bool:
        return self.child_status in ("threshold", "leaf", "cap")


@dataclass
class SolverHooks:
    on_backtrack: Callable[[Backtrack], None] | None = None
    on_matrix: Callable[[GameMatrix, LpSolution | None, LpSolution | None], None] | None = None
    on_iteration: Callable[[dict, "Solver"], None] | None = None


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"records": self.records, "final": self.final}


@dataclass
class SolveResult:
    value_interval: tuple[float, float]
    psi1: TreeStrategy
    psi2: TreeStrategy
    log: RunLog
    bounds: BoundSets
    converged: bool
    stop_reason: str


class Solver:
    def __init__(self, model: PosgModel, config: SolverConfig, hooks: SolverHooks | None = None):
        if config.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        self.model = model
        self.config = config
        self.hooks = hooks or SolverHooks()
        self.bounds = init_bounds(model, config.lambda_mode, config.gamma_penalty)
        lips = self.bounds.lipschitz
        self.rho_max = rho_max(model, config.epsilon, lips, config.rho_method)
        if config.rho == "auto":
            self.rho = self.rho_max / 2 if math.isfinite(self.rho_max) else 1.0
        else:
            self.rho = float(config.rho)
            if not 0 < self.rho < self.rho_max:
                raise ConfigError(f"radius {self.rho} outside (0, {self.rho_max})")
        self.cap = trajectory_cap(model, config.epsilon, self.rho)
        self.thresholds = [thr(t, config.epsilon, self.rho, lips.lambdas, model.discount)
                           for t in range(model.horizon)]
        if any(t <= 0 for t in self.thresholds[:self.cap]):
            raise ConfigError("radius makes a threshold non-positive")
        self.root = initial_occupancy(model)
        self._depth = 0

    # bound helpers

    def gap(self, occ: OccupancyState) -> float:
        return self.bounds.upper_v(occ) - self.bounds.lower_v(occ)

    def _solve(self, M: GameMatrix, want: str) -> LpSolution:
        if self.config.check_duality:
            p, d = solve_both(M)
            if self.hooks.on_matrix:
                self.hooks.on_matrix(M, p, d)
            return p if want == "primal" else d
        sol = primal_solve(M) if want == "primal" else dual_solve(M)
        if self.hooks.on_matrix:
            self.hooks.on_matrix(M, sol if want == "primal" else None,
                                 sol if want == "dual" else None)
        return sol

    def greedy_rule(self, side: BoundSide, occ: OccupancyState):
        m, probe = side.probe_occ(occ)
        M = GameMatrix(side.me, occ.step, probe.rows, m, side.columns(probe, occ.step))
        return self._solve(M, "primal").rule

    def backup(self, side: BoundSide, occ: OccupancyState, cond_ext: Conditional) -> Backup:
        """New bound vector at ``occ`` over the rows of ``cond_ext``.

        Two valid candidates are compared on the support of ``occ``: the
        matrix-game backup (opponent mix from the dual LP) and the Lipschitz
        extension of the best stored value tuple.  The smaller one is kept,
        so the stored vector never exceeds the current bound at ``occ``.
        """
        tau = occ.step
        cap = side.fallback(tau)
        m, probe = side.probe_occ(occ)
        M = GameMatrix(side.me, tau, probe.rows, m, side.columns(probe, tau))
        sol = self._solve(M, "dual")
        probe_ext = side.probe(cond_ext)
        pos = np.searchsorted(probe_ext.rows, probe.rows)
        if np.any(pos >= len(probe_ext.rows)) or np.any(probe_ext.rows[np.minimum(pos, len(probe_ext.rows) - 1)] != probe.rows):
            raise RuntimeError("extended conditional misses a support history")
        mix = sol.mix
        keep = mix > 0
        nu_lp = np.minimum(nu_from_mix(side.columns(probe_ext, tau), mix), cap)
        nodes = tuple(w.node for w, k in zip(side.W[tau], keep) if k)
        psi_lp = TreeStrategy(side.opp, tau, nodes, mix[keep])
        _, j = side.value(occ)
        tup = side.J[tau][j]
        nu_j = np.minimum(side._row_terms(probe_ext, tau, tup), cap)
        if m @ nu_j[pos] < m @ nu_lp[pos] - 1e-12:
            return Backup(cond_ext, probe_ext.rows, nu_j, tup.psi, "lipschitz")
        return Backup(cond_ext, probe_ext.rows, nu_lp, psi_lp, "lp")

    # search

    def explore(self, occ: OccupancyState, tau: int) -> str:
        self._depth = max(self._depth, tau + 1)
        if tau >= self.cap:
            return "cap"
        if self.gap(occ) <= self.thresholds[tau]:
            return "threshold"
        b = self.bounds
        if tau == self.model.horizon - 1:
            beta1, beta2, _ = terminal_nes(occ)
            b.upper.add_terminal(occ, beta2)
            b.lower.add_terminal(occ, beta1)
            return "leaf"
        beta1 = self.greedy_rule(b.upper, occ)
        beta2 = self.greedy_rule(b.lower, occ)
        nxt = transition(occ, beta1, beta2)
        status = self.explore(nxt, tau + 1)
        for side, rule_opp in ((b.upper, beta2), (b.lower, beta1)):
            cond = decompose(occ, side.me)[1]
            cond_ext = advance_conditional(self.model, cond, rule_opp)
            side.update(tau + 1, occ, rule_opp, self.backup(side, nxt, cond_ext))
        if self.hooks.on_backtrack:
            g = self.model.discount
            w_gap = b.upper_w_value(occ, beta1) - b.lower_w_value(occ, beta2)
            self.hooks.on_backtrack(Backtrack(tau, w_gap, g * self.thresholds[tau + 1],
                                              g * self.gap(nxt), status))
        return "inner"

    def iterate(self):
        self._depth = 0
        self.explore(self.root, 0)
        for side in (self.bounds.upper, self.bounds.lower):
            cond = decompose(self.root, side.me)[1]
            side.update(0, None, None, self.backup(side, self.root, cond))

    def extract(self) -> tuple[TreeStrategy, TreeStrategy]:
        """Player 1's tree from the best lower tuple, player 2's from the best upper one."""
        _, ju = self.bounds.upper.value(self.root)
        _, jl = self.bounds.lower.value(self.root)
        return self.bounds.lower.J[0][jl].psi, self.bounds.upper.J[0][ju].psi

    def _eval_due(self, it: int) -> bool:
        every = self.config.eval_every
        if every is None:
            every = "end" if self.model.horizon >= 4 else 10
        if every in ("end", "never", 0) or not isinstance(every, int):
            return False
        return it % every == 0

    def _exploitability(self) -> float:
        from .eval import exploitability
        psi1, psi2 = self.extract()
        return exploitability(self.model, psi1, psi2)

    def solve(self) -> SolveResult:
        cfg = self.config
        log = RunLog()
        start = time.perf_counter()
        it = 0
        traj = 0
        while True:
            upper0 = self.bounds.upper_v(self.root)
            lower0 = self.bounds.lower_v(self.root)
            record = {"iter": it, "elapsed_ms": (time.perf_counter() - start) * 1e3,
                      "upper0": upper0, "lower0": lower0, "trajectory_len": traj,
                      "set_sizes": self.bounds.sizes()}
            if it > 0 and self._eval_due(it):
                record["exploitability"] = self._exploitability()
            log.records.append(record)
            if self.hooks.on_iteration:
                self.hooks.on_iteration(record, self)
            if upper0 - lower0 <= self.thresholds[0]:
                reason = "converged"
                break
            if it >= cfg.max_iterations:
                reason = "max_iterations"
                break
            if cfg.max_seconds is not None and time.perf_counter() - start >= cfg.max_seconds:
                reason = "max_seconds"
                break
            self.iterate()
            traj = self._depth
            it += 1
        psi1, psi2 = self.extract()
        from .strategy import tree_to_json
        final = {"value_interval": [lower0, upper0], "converged": reason == "converged",
                 "stop_reason": reason, "iterations": it, "epsilon": cfg.epsilon,
                 "rho": self.rho, "rho_max": self.rho_max,
                 "strategies": {"player1": tree_to_json(self.model, psi1),
                                "player2": tree_to_json(self.model, psi2)}}
        if cfg.eval_every != "never":
            final["exploitability"] = self._exploitability()
        log.final = final
        return SolveResult((lower0, upper0), psi1, psi2, log, self.bounds,
                           reason == "converged", reason)


def solve(model: PosgModel, config: SolverConfig, hooks: SolverHooks | None = None) -> SolveResult:
    return Solver(model, config, hooks).solve()
