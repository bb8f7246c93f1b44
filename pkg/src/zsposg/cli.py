"""Command-line entry point: ``solve``, ``oracle``, ``eval`` and ``bench``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .eval import OracleSizeError
from .games_lp import LpError
from .hsvi import ConfigError, SolverConfig, solve
from .model import ModelError, PosgModel, behavioral_from_json, behavioral_to_json, load_model
from .strategy import TreeStrategy, tree_from_json, tree_to_behavioral, tree_to_json

EXIT_OK = 0
EXIT_BUDGET = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _model(args) -> PosgModel:
    model = load_model(args.model)
    if args.horizon is not None:
        if args.horizon < 1:
            raise UsageError("--horizon must be positive")
        model = model.with_horizon(args.horizon)
    return model


def _epsilon(args, model: PosgModel) -> float:
    if args.epsilon_abs is not None:
        eps = args.epsilon_abs
    else:
        eps = args.epsilon_frac * model.horizon * (model.r_max - model.r_min)
    if not eps > 0:
        raise UsageError("epsilon must be positive")
    return eps


def _rho(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _eval_every(text: str):
    if text in ("end", "never"):
        return text
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'end' or 'never', got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("--eval-every must be at least 1")
    return n


def _config(args, model: PosgModel) -> SolverConfig:
    return SolverConfig(epsilon=_epsilon(args, model), rho=args.rho, lambda_mode=args.lambda_mode,
                        max_seconds=args.max_seconds, max_iterations=args.max_iterations,
                        eval_every=args.eval_every, seed=args.seed,
                        gamma_penalty=not args.no_gamma_penalty)


def _model_digest(model: PosgModel) -> str:
    text = json.dumps(model.to_json(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def _sig6(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def cmd_solve(args) -> int:
    model = _model(args)
    config = _config(args, model)
    start = time.perf_counter()
    result = solve(model, config)
    wall = time.perf_counter() - start
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "runlog.json", result.log.to_json())
        for player, psi in ((1, result.psi1), (2, result.psi2)):
            _write_json(out / f"strategy{player}_tree.json", tree_to_json(model, psi))
            if args.convert_strategies:
                beh = tree_to_behavioral(model, psi)
                _write_json(out / f"strategy{player}_behavioral.json", behavioral_to_json(beh, model))
        _write_json(out / "manifest.json", {
            "model": {"source": args.model, "horizon": model.horizon, "sha256": _model_digest(model)},
            "config": config.to_json(),
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "seed": config.seed,
            "wall_clock_s": wall,
            "outcome": {"stop_reason": result.stop_reason, "converged": result.converged,
                        "value_interval": list(result.value_interval),
                        "iterations": result.log.final["iterations"]},
        })
    lo, hi = result.value_interval
    summary = {"stop_reason": result.stop_reason, "lower": lo, "upper": hi, "gap": hi - lo,
               "iterations": result.log.final["iterations"]}
    if "exploitability" in result.log.final:
        summary["exploitability"] = result.log.final["exploitability"]
    print(json.dumps(summary))
    return EXIT_OK if result.converged else EXIT_BUDGET


def cmd_oracle(args) -> int:
    from .eval import brute_force_nev, sflp_oracle
    model = _model(args)
    if args.method == "sflp":
        print(repr(sflp_oracle(model)[0]))
    elif args.method == "brute":
        print(repr(brute_force_nev(model)))
    else:
        print(json.dumps({"sflp": sflp_oracle(model)[0], "brute": brute_force_nev(model)}))
    return EXIT_OK


def _load_strategy(model: PosgModel, path: str, player: int):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        strat = tree_from_json(model, data) if "nodes" in data else behavioral_from_json(data, model)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: malformed strategy ({exc})") from None
    if strat.player != player:
        raise ModelError(f"{path}: expected a strategy for player {player}, got {strat.player}")
    start = strat.step if isinstance(strat, TreeStrategy) else strat.start
    if start != 0:
        raise ModelError(f"{path}: strategy must start at step 0")
    return strat


def cmd_eval(args) -> int:
    from .eval import evaluate_profile
    model = _model(args)
    s1 = _load_strategy(model, args.strategy1, 1)
    s2 = _load_strategy(model, args.strategy2, 2)
    print(json.dumps(evaluate_profile(model, s1, s2)))
    return EXIT_OK


BENCH_FIELDS = ["model", "horizon", "status", "time_s", "lower", "upper", "gap", "iterations"]


def cmd_bench(args) -> int:
    rows = []
    for source in args.models:
        model = load_model(source)
        horizons = args.horizons or [model.horizon]
        for H in horizons:
            m = model.with_horizon(H)
            eps = args.epsilon_frac * H * (m.r_max - m.r_min)
            cfg = SolverConfig(epsilon=eps, lambda_mode=args.lambda_mode,
                               max_seconds=args.max_seconds, eval_every="never")
            t0 = time.perf_counter()
            res = solve(m, cfg)
            lo, hi = res.value_interval
            rows.append({"model": source, "horizon": H,
                         "status": "converged" if res.converged else res.stop_reason,
                         "time_s": time.perf_counter() - t0, "lower": lo, "upper": hi,
                         "gap": hi - lo, "iterations": res.log.final["iterations"]})
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: _sig6(v) for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zsposg", description="Solve and evaluate finite-horizon zero-sum POSGs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_flags(sp):
        sp.add_argument("--model", required=True,
                        help="model file or builtin:matching_pennies / builtin:random:SEED:SxAxZxH")
        sp.add_argument("--horizon", type=int, help="override the model horizon")

    s = sub.add_parser("solve", help="run the heuristic search solver")
    model_flags(s)
    eps = s.add_mutually_exclusive_group()
    eps.add_argument("--epsilon-frac", type=float, default=0.01,
                     help="target gap as a fraction of H*(r_max-r_min) (default 0.01)")
    eps.add_argument("--epsilon-abs", type=float, help="absolute target gap")
    s.add_argument("--rho", type=_rho, default="auto")
    s.add_argument("--lambda", dest="lambda_mode", choices=["paper", "theorem"], default="paper")
    s.add_argument("--eval-every", type=_eval_every, default=None,
                   help="exploitability cadence: N iterations, 'end' or 'never'")
    s.add_argument("--max-seconds", type=float)
    s.add_argument("--max-iterations", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="directory for the run log, manifest and strategies")
    s.add_argument("--convert-strategies", action="store_true",
                   help="also write behavioral versions of the extracted strategies")
    s.add_argument("--no-gamma-penalty", action="store_true",
                   help="drop the discount factor on the Lipschitz penalty term")
    s.set_defaults(func=cmd_solve)

    o = sub.add_parser("oracle", help="exact equilibrium value of a small game")
    model_flags(o)
    o.add_argument("--method", choices=["sflp", "brute", "both"], default="sflp")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("eval", help="exploitability of a strategy profile")
    model_flags(e)
    e.add_argument("--strategy1", required=True, help="player 1 strategy JSON (behavioral or tree)")
    e.add_argument("--strategy2", required=True, help="player 2 strategy JSON (behavioral or tree)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time-to-gap table over a list of models")
    b.add_argument("--models", nargs="+", required=True)
    b.add_argument("--horizons", type=int, nargs="*")
    b.add_argument("--epsilon-frac", type=float, default=0.01)
    b.add_argument("--lambda", dest="lambda_mode", choices=["paper", "theorem"], default="paper")
    b.add_argument("--max-seconds", type=float, default=60.0)
    b.add_argument("--out", help="CSV file (default: stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"zsposg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, OracleSizeError) as exc:
        print(f"zsposg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LpError as exc:
        print(f"zsposg: LP failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"zsposg: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
