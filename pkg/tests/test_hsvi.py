import math

import pytest

from zsposg.bounds import LipschitzSchedule
from zsposg.eval import exploitability, sflp_oracle
from zsposg.hsvi import (ConfigError, Solver, SolverConfig, SolverHooks, rho_max, solve, thr,
                         trajectory_cap)
from zsposg.model import build_random_model
from zsposg.occupancy import initial_occupancy
from zsposg.strategy import tree_to_behavioral


def test_thr_base_and_undiscounted():
    lams = [6.0, 3.0, 0.0]
    assert thr(0, 0.06, 0.01, lams, 1.0) == 0.06
    assert thr(2, 0.06, 0.001, lams, 1.0) == pytest.approx(0.06 - 2 * 0.001 * (3 + 6))


def test_thr_discounted_sum():
    lams = [2.0, 1.0, 0.5]
    g, eps, rho = 0.9, 0.1, 0.001
    ref = g ** -2 * eps - 2 * rho * (lams[1] / g + lams[0] / g ** 2)
    assert thr(2, eps, rho, lams, g) == pytest.approx(ref)


def test_rho_max_closed_form_matching_pennies(mp):
    lips = LipschitzSchedule.for_model(mp, "theorem")
    assert rho_max(mp, 0.06, lips) == pytest.approx(1 / 300)
    r = rho_max(mp, 0.06, lips) / 2
    assert all(thr(t, 0.06, r, lips.lambdas, 1.0) > 0 for t in range(mp.horizon))


def test_rho_max_halves_with_default_constants(mp):
    m = mp.with_horizon(4)
    theorem = rho_max(m, 0.12, LipschitzSchedule.for_model(m, "theorem"), "generic")
    paper = rho_max(m, 0.12, LipschitzSchedule.for_model(m, "paper"), "generic")
    assert paper == pytest.approx(theorem / 2)


@pytest.mark.parametrize("seed", range(5))
def test_thresholds_positive_below_rho_max(seed):
    m = build_random_model(seed, 2, 2, 2, 4)
    for mode in ("paper", "theorem"):
        lips = LipschitzSchedule.for_model(m, mode)
        r = 0.99 * rho_max(m, 0.05, lips)
        assert thr(m.horizon - 1, 0.05, r, lips.lambdas, 1.0) > 0


def test_trajectory_cap():
    m = build_random_model(0, 2, 2, 2, 5)
    assert trajectory_cap(m, 0.1, 0.001) == 5
    from zsposg.model import PosgModel
    d = PosgModel(m.states, m.actions1, m.actions2, m.obs1, m.obs2, m.trans, m.reward, 50, 0.5, m.b0)
    lam_inf = 0.5 * (d.r_max - d.r_min) / 0.5
    eps, rho = 0.1, 0.001
    slack = 2 * rho * lam_inf / 0.5
    width = (d.r_max - d.r_min) * (1 - 0.5 ** 50) / 0.5
    assert trajectory_cap(d, eps, rho) == math.ceil(math.log((eps - slack) / (width - slack), 0.5))


def test_config_validation(mp):
    with pytest.raises(ConfigError):
        Solver(mp, SolverConfig(epsilon=0.06, rho=1.0))
    with pytest.raises(ConfigError):
        Solver(mp, SolverConfig(epsilon=0.0))
    s = Solver(mp, SolverConfig(epsilon=0.06))
    assert s.rho == pytest.approx(s.rho_max / 2)


def test_gap_below_threshold_adds_nothing(mp):
    s = Solver(mp, SolverConfig(epsilon=100.0))
    before = s.bounds.sizes()
    assert s.explore(initial_occupancy(mp), 0) == "threshold"
    assert s.bounds.sizes() == before


def test_single_trajectory_growth(mp):
    s = Solver(mp, SolverConfig(epsilon=0.06))
    s.iterate()
    for side in ("upper", "lower"):
        sizes = s.bounds.sizes()[side]
        # one terminal tuple and one backed-up stage tuple on top of the initial ones
        assert sizes["W"] == [2, 2]
        assert sizes["J"] == [2, 2]


def test_matching_pennies_converges(mp):
    res = solve(mp, SolverConfig(epsilon=0.06))
    lo, hi = res.value_interval
    assert res.converged and hi - lo <= 0.06
    assert lo - 1e-9 <= 0.2 <= hi + 1e-9
    assert exploitability(mp, res.psi1, res.psi2) <= (hi - lo) / 2 + 1e-6


def test_run_log_records(mp):
    res = solve(mp, SolverConfig(epsilon=0.06, eval_every=1))
    recs = res.log.records
    assert recs[0]["iter"] == 0 and recs[-1]["iter"] == res.log.final["iterations"]
    assert all("exploitability" in r for r in recs[1:])
    for a, b in zip(recs, recs[1:]):
        assert b["upper0"] <= a["upper0"] + 1e-9 and b["lower0"] >= a["lower0"] - 1e-9
    assert set(res.log.final["strategies"]) == {"player1", "player2"}


def test_budget_stop(mp):
    res = solve(mp, SolverConfig(epsilon=0.06, max_seconds=0))
    assert not res.converged and res.stop_reason == "max_seconds"
    res = solve(mp, SolverConfig(epsilon=0.06, max_iterations=1))
    assert res.stop_reason in ("max_iterations", "converged")


@pytest.mark.parametrize("seed", range(4))
def test_random_games_contain_oracle_value(seed):
    m = build_random_model(seed, 2, 2, 2, 2)
    res = solve(m, SolverConfig(epsilon=0.01 * 2 * (m.r_max - m.r_min), eval_every="never"))
    v = sflp_oracle(m)[0]
    lo, hi = res.value_interval
    assert lo - 1e-6 <= v <= hi + 1e-6
    beh1, beh2 = tree_to_behavioral(m, res.psi1), tree_to_behavioral(m, res.psi2)
    assert exploitability(m, beh1, beh2) <= (hi - lo) / 2 + 1e-6


def test_trajectories_respect_horizon():
    m = build_random_model(9, 2, 2, 2, 3)
    lengths = []
    res = solve(m, SolverConfig(epsilon=0.05, eval_every="never"),
                SolverHooks(on_iteration=lambda rec, s: lengths.append(rec["trajectory_len"])))
    assert res.converged and max(lengths) <= m.horizon


def test_lower_schedule_without_gamma_penalty():
    m = build_random_model(2, 2, 2, 1, 2)
    res = solve(m, SolverConfig(epsilon=0.05, lambda_mode="theorem", gamma_penalty=False,
                                eval_every="never"))
    v = sflp_oracle(m)[0]
    assert res.value_interval[0] - 1e-6 <= v <= res.value_interval[1] + 1e-6
