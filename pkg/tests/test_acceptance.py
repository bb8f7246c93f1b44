"""Acceptance criteria.  Each test prints one PASS/FAIL line and asserts it.

The expensive solver runs are shared through module-scoped fixtures: the
matching pennies golden run and 50 small random games solved to 1% of their
payoff range.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_occupancy, random_rule, random_tree
from zsposg.bounds import LipschitzSchedule
from zsposg.cli import main
from zsposg.eval import best_response, brute_force_nev, exploitability, sflp_oracle
from zsposg.hsvi import Solver, SolverConfig, SolverHooks, rho_max, thr
from zsposg.model import build_random_model, matching_pennies
from zsposg.occupancy import (conditional_row_l1, decompose, l1_distance, transition,
                              transition_conditional)
from zsposg.strategy import realization_weights, tree_from_json, tree_to_behavioral

MAX_ITERATIONS = 100_000
MP_VALUE = 0.2


def report(capsys, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)


def suite_game(k: int):
    H = 1 + k % 3
    Z = 1 + (k // 3) % 2
    return build_random_model(1000 + k, 2, 2, Z, H)


class Run:
    """One instrumented solver run."""

    def __init__(self, model, eps, **cfg):
        self.model = model
        self.records = []
        self.backtracks = []
        self.matrices = []
        hooks = SolverHooks(on_backtrack=self.backtracks.append,
                            on_iteration=lambda rec, _s: self.records.append((rec["lower0"], rec["upper0"])),
                            on_matrix=self._matrix)
        self.solver = Solver(model, SolverConfig(epsilon=eps, max_iterations=MAX_ITERATIONS, **cfg), hooks)
        t0 = time.perf_counter()
        self.result = self.solver.solve()
        self.seconds = time.perf_counter() - t0

    def _matrix(self, M, primal, dual):
        if primal is not None and dual is not None:
            self.matrices.append(abs(primal.value - dual.value))


@pytest.fixture(scope="module")
def golden():
    mp = matching_pennies()
    return Run(mp, 0.01 * mp.horizon * (mp.r_max - mp.r_min), eval_every="never")


@pytest.fixture(scope="module")
def suite():
    runs = []
    for k in range(50):
        m = suite_game(k)
        run = Run(m, 0.01 * m.horizon * (m.r_max - m.r_min), eval_every="never")
        run.value = sflp_oracle(m)[0]
        runs.append(run)
    return runs


def test_matching_pennies_golden_run(capsys, tmp_path):
    mp = matching_pennies()
    t0 = time.perf_counter()
    code = main(["solve", "--model", "builtin:matching_pennies", "--epsilon-frac", "0.01",
                 "--eval-every", "never", "--out", str(tmp_path)])
    seconds = time.perf_counter() - t0
    runlog = json.loads((tmp_path / "runlog.json").read_text())
    lo, hi = runlog["final"]["value_interval"]
    sflp = sflp_oracle(mp)[0]
    brute = brute_force_nev(mp)
    psi1 = tree_from_json(mp, json.loads((tmp_path / "strategy1_tree.json").read_text()))
    psi2 = tree_from_json(mp, json.loads((tmp_path / "strategy2_tree.json").read_text()))
    expl = exploitability(mp, psi1, psi2)
    eps = 0.01 * mp.horizon * (mp.r_max - mp.r_min)
    ok = (code == 0 and seconds < 10.0 and hi - lo <= eps + 1e-12
          and lo - 1e-9 <= MP_VALUE <= hi + 1e-9
          and abs(sflp - MP_VALUE) <= 1e-7 and abs(brute - MP_VALUE) <= 1e-7
          and expl <= eps / 2 + 1e-6)
    report(capsys, "matching pennies golden run", ok,
           f"exit {code}, {seconds:.2f}s, interval [{lo:.6f}, {hi:.6f}], "
           f"sflp {sflp:.9f}, brute {brute:.9f}, exploitability {expl:.2e}")
    assert ok


def test_oracle_cross_validation(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        m = suite_game(k)
        worst = max(worst, abs(sflp_oracle(m)[0] - brute_force_nev(m)))
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-7 and seconds < 30.0
    report(capsys, "oracle cross-validation", ok, f"50 games, max |sflp-brute| {worst:.2e}, {seconds:.2f}s")
    assert ok


def test_sandwich(capsys, suite):
    bad = 0
    checked = 0
    for run in suite:
        for lo, hi in run.records:
            checked += 1
            if not lo - 1e-6 <= run.value <= hi + 1e-6:
                bad += 1
    report(capsys, "sandwich property", bad == 0, f"{checked} iterates over 50 games, {bad} violations")
    assert bad == 0


def test_monotonicity(capsys, suite, golden):
    bad = 0
    steps = 0
    for run in suite + [golden]:
        for (lo0, hi0), (lo1, hi1) in zip(run.records, run.records[1:]):
            steps += 1
            if hi1 > hi0 + 1e-9 or lo1 < lo0 - 1e-9:
                bad += 1
    report(capsys, "monotonicity", bad == 0, f"{steps} consecutive iterate pairs, {bad} violations")
    assert bad == 0


def test_contraction(capsys, suite, golden):
    """At the backtrack that closes a trajectory the stage gap is at most
    gamma * thr(tau + 1).  Deeper backtracks are bounded by gamma times the
    updated gap of their successor, which is what the induction chains."""
    closing = bad_closing = bad_chain = total = above_thr = 0
    for run in suite + [golden]:
        for b in run.backtracks:
            total += 1
            if b.w_gap > b.gamma_gap_next + 1e-7:
                bad_chain += 1
            if b.ends_trajectory:
                closing += 1
                if b.w_gap > b.gamma_thr_next + 1e-7:
                    bad_closing += 1
            elif b.w_gap > b.gamma_thr_next + 1e-7:
                above_thr += 1
    ok = bad_closing == 0 and bad_chain == 0 and closing > 0
    report(capsys, "contraction", ok,
           f"{closing} closing backtracks above gamma*thr: {bad_closing}; "
           f"{total} backtracks above gamma*gap(next): {bad_chain}; "
           f"(intermediate backtracks above gamma*thr, not bounded: {above_thr})")
    assert ok


def test_lipschitz(capsys):
    rng = np.random.default_rng(7)
    worst_t = -np.inf
    for _ in range(1000):
        m = build_random_model(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), 2,
                               int(rng.integers(1, 3)), 3)
        tau = int(rng.integers(0, 2))
        a = random_occupancy(m, tau, rng, sparse=True)
        b = random_occupancy(m, tau, rng, sparse=True)
        b1, b2 = random_rule(m, 1, tau, rng, True), random_rule(m, 2, tau, rng, True)
        worst_t = max(worst_t, l1_distance(transition(a, b1, b2), transition(b, b1, b2)) - l1_distance(a, b))

    worst_nu = -np.inf
    pairs = 0
    draws = 0
    while draws < 200:
        m = build_random_model(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), 2, 2, 3)
        tau = int(rng.integers(1, 3))
        me = int(rng.integers(1, 3))
        lam = LipschitzSchedule.for_model(m, "theorem")[tau]
        _, ca = decompose(random_occupancy(m, tau, rng), me)
        _, cb = decompose(random_occupancy(m, tau, rng, sparse=True), me)
        shared = np.intersect1d(ca.rows, cb.rows)
        if len(shared) == 0:
            continue
        draws += 1
        psi = random_tree(m, 3 - me, rng, start=tau)
        nu_a = best_response(m, psi, ({int(h): 1.0 / len(ca.rows) for h in ca.rows}, ca)).nu
        nu_b = best_response(m, psi, ({int(h): 1.0 / len(cb.rows) for h in cb.rows}, cb)).nu
        rows, dist = conditional_row_l1(ca, cb)
        for h, d in zip(rows, dist):
            if h in nu_a and h in nu_b:
                pairs += 1
                worst_nu = max(worst_nu, abs(nu_a[h] - nu_b[h]) - lam * d)
    ok = worst_t <= 1e-9 and worst_nu <= 1e-9
    report(capsys, "Lipschitz", ok,
           f"1000 transition triples, max excess {worst_t:.2e}; "
           f"200 conditional perturbations ({pairs} rows), max nu excess {worst_nu:.2e}")
    assert ok


def test_conditional_independent_of_own_rule(capsys):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        m = build_random_model(int(rng.integers(1 << 30)), int(rng.integers(1, 4)), 2,
                               int(rng.integers(1, 3)), 3)
        tau = int(rng.integers(0, 2))
        occ = random_occupancy(m, tau, rng, sparse=True)
        b2 = random_rule(m, 2, tau, rng, True)
        ca = transition_conditional(occ, random_rule(m, 1, tau, rng), b2, 1, extended=True)
        cb = transition_conditional(occ, random_rule(m, 1, tau, rng, True), b2, 1, extended=True)
        _, dist = conditional_row_l1(ca, cb)
        worst = max(worst, float(np.max(dist)))
    ok = worst <= 1e-12
    report(capsys, "conditional term independence", ok, f"200 draws, max row l1 {worst:.2e}")
    assert ok


def test_lp_duality(capsys, golden):
    worst = max(golden.matrices)
    ok = worst <= 1e-7
    report(capsys, "LP duality", ok, f"{len(golden.matrices)} golden-run matrices, max |primal-dual| {worst:.2e}")
    assert ok


def test_strategy_conversion(capsys, suite):
    worst_br = worst_rw = 0.0
    for run in suite[:20]:
        m = run.model
        for psi in (run.result.psi1, run.result.psi2):
            native = best_response(m, psi).value
            converted = best_response(m, tree_to_behavioral(m, psi)).value
            worst_br = max(worst_br, abs(native - converted))
            worst_rw = max(worst_rw, realization_weights(m, psi).consistency_error())
    ok = worst_br <= 1e-6 and worst_rw <= 1e-9
    report(capsys, "strategy conversion", ok,
           f"20 games x 2 extracted trees, max BR diff {worst_br:.2e}, max RW residual {worst_rw:.2e}")
    assert ok


def test_threshold_positivity(capsys):
    mp = matching_pennies()
    lips = LipschitzSchedule.for_model(mp, "theorem")
    r = rho_max(mp, 0.06, lips)
    thresholds = [thr(t, 0.06, r / 2, lips.lambdas, mp.discount) for t in range(mp.horizon)]
    ok = abs(r - 1 / 300) <= 1e-15 and all(t > 0 for t in thresholds)
    report(capsys, "threshold positivity", ok,
           f"rho_max {r!r} (1/300 = {1 / 300!r}), thr at rho_max/2: {[round(t, 6) for t in thresholds]}")
    assert ok


def test_termination(capsys, suite, golden):
    runs = suite + [golden]
    iters = [r.result.log.final["iterations"] for r in runs]
    ok = all(r.result.converged for r in runs) and max(iters) < MAX_ITERATIONS
    report(capsys, "termination", ok,
           f"{sum(r.result.converged for r in runs)}/{len(runs)} converged, max iterations {max(iters)}")
    assert ok
