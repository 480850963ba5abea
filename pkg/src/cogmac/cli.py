"""Command-line front end.

Exit codes: 0 success, 1 simulation disagrees with the analytics (validate),
2 usage error, 3 model-domain error (unstable or out-of-model parameters),
4 I/O error.

Settings come from ``--config run.json`` (keys ``problem``, ``protocol``,
``grid``, ``sim``, ``output``) and are overridden by individual flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .analytics import full_metrics, metric_grid
from .core import (
    DesignProblem,
    InfeasibleError,
    ModelDomainError,
    NumericalError,
    Protocol,
    ValidationError,
)
from .optimizer import DEFAULT_RESOLUTION, SWEEP_AXES, solve_constrained, sweep
from .simulator import EnhancedPolicy, UnstableRunError, run, warmup_slots

EXIT_OK, EXIT_DISAGREE, EXIT_USAGE, EXIT_DOMAIN, EXIT_IO = 0, 1, 2, 3, 4
COMMANDS = ("analyze", "contour", "optimize", "sweep", "simulate", "validate")
CONTOUR_HEADER = ["q", "r", "p_s", "t_col", "c_s"]
Z_LIMIT = 3.0


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--n", type=int, help="number of secondary users")
    common.add_argument("--t-int", type=float, help="mean slots between primary arrivals")
    common.add_argument("--t-pac", type=float, help="mean packets per arrival")
    common.add_argument("--theta", type=float, help="fairness level")
    common.add_argument("--gamma", type=float, help="cap on mean collisions per on period")
    common.add_argument("--eta", type=float, help="cap on the primary collision probability")
    common.add_argument("--epsilon", type=float, help="search domain margin")
    common.add_argument("--q", type=float, help="transmission probability after idle")
    common.add_argument("--r", type=float, help="transmission probability after failure")
    common.add_argument("--grid", type=int, help="grid points per axis")
    common.add_argument("--horizon", type=int, help="simulated slots (warm-up included)")
    common.add_argument("--seed", type=int)
    common.add_argument("--p1", action="store_true", default=None, help="back off after success then failure")
    common.add_argument("--p2", action="store_true", default=None, help="back off after B consecutive failures")
    common.add_argument("--b", type=int, help="memory length for --p2")
    common.add_argument("--traffic", choices=["geometric", "deterministic"])
    common.add_argument("--trace", type=Path, help="per-slot CSV trace (simulate)")
    common.add_argument("--out", type=Path, help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"])

    parser = argparse.ArgumentParser(prog="cogmac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "sweep":
            p.add_argument("--axis", choices=SWEEP_AXES)
            p.add_argument(
                "--values",
                help="comma list (0.1,0.2) or start:stop:step range, stop inclusive",
            )
    return parser


def parse_values(text: str) -> list[float]:
    if ":" in text:
        start, stop, stepv = (float(x) for x in text.split(":"))
        if stepv <= 0:
            raise UsageError("range step must be positive")
        count = int(math.floor((stop - start) / stepv + 1e-9)) + 1
        return [round(start + i * stepv, 12) for i in range(count)]
    return [float(x) for x in text.split(",") if x.strip()]


def load_settings(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    problem = dict(cfg.get("problem", {}))
    net = dict(problem.get("config", {}))
    proto = dict(cfg.get("protocol") or {})
    grid = dict(cfg.get("grid") or {})
    sim = dict(cfg.get("sim") or {})
    output = dict(cfg.get("output") or {})

    def put(d: dict, key: str, value: Any) -> None:
        if value is not None:
            d[key] = value

    put(net, "n_secondary", args.n)
    put(net, "t_int", args.t_int)
    put(net, "t_pac", args.t_pac)
    put(net, "traffic_model", args.traffic)
    put(problem, "theta", args.theta)
    put(problem, "gamma", args.gamma)
    put(problem, "eta", args.eta)
    put(problem, "epsilon", args.epsilon)
    put(proto, "q", args.q)
    put(proto, "r", args.r)
    put(grid, "resolution", args.grid)
    put(sim, "horizon", args.horizon)
    put(sim, "seed", args.seed)
    put(sim, "p1", args.p1)
    put(sim, "p2", args.p2)
    put(sim, "b", args.b)
    put(sim, "traffic_model", args.traffic)
    put(output, "path", str(args.out) if args.out else None)
    put(output, "format", args.format)
    if "theta" not in problem and "theta" in proto:
        problem["theta"] = proto["theta"]
    if "theta" in problem:
        proto.setdefault("theta", problem["theta"])
    if "traffic_model" in sim:
        net["traffic_model"] = sim["traffic_model"]
    problem["config"] = net
    return {
        "command": args.command,
        "problem": problem,
        "protocol": proto,
        "grid": grid,
        "sim": sim,
        "output": output,
        "axis": getattr(args, "axis", None) or cfg.get("axis"),
        "values": getattr(args, "values", None) or cfg.get("values"),
        "trace": args.trace,
    }


def _problem(settings: dict) -> DesignProblem:
    problem = settings["problem"]
    net = problem["config"]
    missing = [k for k in ("n_secondary", "t_int", "t_pac") if k not in net]
    if "theta" not in problem:
        missing.append("theta")
    if missing:
        raise UsageError(f"missing settings: {', '.join(missing)}")
    return DesignProblem.from_dict(problem)


def _protocol(settings: dict) -> Protocol:
    proto = settings["protocol"]
    missing = [k for k in ("q", "r", "theta") if k not in proto]
    if missing:
        raise UsageError(f"missing protocol settings: {', '.join(missing)}")
    return Protocol(proto["q"], proto["r"], proto["theta"])


def _format(settings: dict, default: str) -> str:
    out = settings["output"]
    if "format" in out:
        return out["format"]
    path = out.get("path")
    if path and path.endswith(".csv"):
        return "csv"
    if path and path.endswith(".json"):
        return "json"
    return default


def rows_to_csv(rows: list[dict], header: Optional[list[str]] = None) -> str:
    buf = io.StringIO()
    header = header or (list(rows[0].keys()) if rows else [])
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    return value


def _emit(text: str, settings: dict) -> None:
    path = settings["output"].get("path")
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).write_text(text, newline="\n")


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def cmd_analyze(settings: dict) -> int:
    protocol = _protocol(settings)
    problem = _problem(settings)
    p1 = bool(settings["sim"].get("p1", False))
    metrics = full_metrics(protocol, problem.config, p1_enabled=p1)
    data = metrics.to_dict()
    if _format(settings, "json") == "csv":
        _emit(rows_to_csv([data]), settings)
    else:
        _emit(_json({"protocol": protocol.to_dict(), "config": problem.config.to_dict(), "metrics": data}), settings)
    return EXIT_OK


def cmd_contour(settings: dict) -> int:
    problem = _problem(settings)
    grid = settings["grid"]
    res = int(grid.get("resolution", DEFAULT_RESOLUTION))
    if res < 1:
        raise UsageError("grid resolution must be >= 1")
    eps = problem.epsilon
    q_lo, q_hi = grid.get("q_range", (eps, 1.0 - eps))
    r_lo, r_hi = grid.get("r_range", (eps, 1.0 - eps))
    qs = np.linspace(q_lo, q_hi, res)
    rs = np.linspace(r_lo, r_hi, res)
    g = metric_grid(qs, rs, problem.theta, problem.config)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONTOUR_HEADER)
    for i, q in enumerate(qs):
        for j, r in enumerate(rs):
            w.writerow([repr(float(q)), repr(float(r)), repr(float(g.p_s[i, j])),
                        repr(float(g.t_col[i, j])), repr(float(g.c_s[i, j]))])
    _emit(buf.getvalue(), settings)
    return EXIT_OK


def cmd_optimize(settings: dict) -> int:
    problem = _problem(settings)
    res = int(settings["grid"].get("resolution", DEFAULT_RESOLUTION))
    sol = solve_constrained(problem, resolution=res)
    data = {**sol.to_dict(), "gamma": problem.gamma}
    if _format(settings, "json") == "csv":
        _emit(rows_to_csv([data]), settings)
    else:
        _emit(_json(data), settings)
    return EXIT_OK


def cmd_sweep(settings: dict) -> int:
    problem = _problem(settings)
    axis, values = settings["axis"], settings["values"]
    if axis is None or values is None:
        raise UsageError("sweep needs --axis and --values")
    if isinstance(values, str):
        values = parse_values(values)
    res = int(settings["grid"].get("resolution", DEFAULT_RESOLUTION))
    result = sweep(problem, axis, values, resolution=res)
    rows = result.to_rows()
    if _format(settings, "csv") == "json":
        _emit(_json({"axis": axis, "points": rows}), settings)
    else:
        header = [axis, "q_opt", "r_opt", "c_s", "t_col", "p_s", "binding", "on_contour", "error"]
        if axis == "n_hat":
            header = [axis, "p_s", "t_ns_tilde", "t_s_tilde", "t_col", "p_c", "c_s", "c_p", "c_total",
                      "efficiency", "error"]
        _emit(rows_to_csv(rows, header), settings)
    return EXIT_OK


def _policy(settings: dict) -> EnhancedPolicy:
    sim = settings["sim"]
    return EnhancedPolicy(
        _protocol(settings),
        b=int(sim.get("b", 5)),
        p1_enabled=bool(sim.get("p1", False)),
        p2_enabled=bool(sim.get("p2", False)),
    )


def _sim_run(settings: dict, problem: DesignProblem, trace=None):
    sim = settings["sim"]
    if "horizon" not in sim:
        raise UsageError("missing setting: horizon")
    return run(_policy(settings), problem.config, int(sim["horizon"]), int(sim.get("seed", 0)), trace_path=trace)


def cmd_simulate(settings: dict) -> int:
    problem = _problem(settings)
    stats = _sim_run(settings, problem, settings["trace"])
    data = stats.to_dict()
    data.pop("batches")
    if _format(settings, "json") == "csv":
        se = data.pop("standard_errors")
        data.update({f"se_{k}": v for k, v in se.items()})
        _emit(rows_to_csv([data]), settings)
    else:
        _emit(_json(data), settings)
    return EXIT_OK


def validation_rows(settings: dict) -> list[dict]:
    problem = _problem(settings)
    policy = _policy(settings)
    stats = _sim_run(settings, problem)
    se = stats.standard_errors()
    proto, cfg = policy.base, problem.config
    analytic = full_metrics(proto, cfg, p1_enabled=policy.p1_enabled)
    pairs = [("p_s", analytic.p_s, stats.p_s), ("c_s", analytic.c_s, stats.c_s)]
    if not policy.p2_enabled:
        # no closed form exists for the collision rule with B-slot back-off
        pairs += [("t_col", analytic.t_col, stats.t_col_empirical), ("p_c", analytic.p_c, stats.p_c)]
    rows = []
    for name, a, e in pairs:
        s = se[name]
        z = (e - a) / s if s and s > 0 else math.inf
        rows.append({"metric": name, "analytic": a, "empirical": e, "std_error": s, "z": z,
                     "pass": abs(z) <= Z_LIMIT})
    if policy.p2_enabled:
        worst = stats.max_collisions_in_on_period
        rows.append({"metric": "max_collisions_in_on_period", "analytic": float(policy.b),
                     "empirical": float(worst), "std_error": 0.0, "z": 0.0, "pass": worst <= policy.b})
    return rows


def cmd_validate(settings: dict) -> int:
    problem = _problem(settings)
    horizon = settings["sim"].get("horizon")
    if horizon is None:
        raise UsageError("missing setting: horizon")
    if int(horizon) <= warmup_slots(problem.config):
        raise UsageError(f"horizon must exceed the warm-up of {warmup_slots(problem.config)} slots")
    rows = validation_rows(settings)
    header = ["metric", "analytic", "empirical", "std_error", "z", "pass"]
    if _format(settings, "csv") == "json":
        _emit(_json(rows), settings)
    else:
        _emit(rows_to_csv(rows, header), settings)
    if settings["output"].get("path") is not None:
        for row in rows:
            print(f"{row['metric']:>28}  analytic={row['analytic']:.6g}  empirical={row['empirical']:.6g}  "
                  f"z={row['z']:+.2f}  {'ok' if row['pass'] else 'FAIL'}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_DISAGREE


HANDLERS = {
    "analyze": cmd_analyze,
    "contour": cmd_contour,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args)
        return HANDLERS[args.command](settings)
    except (UsageError, ValidationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnstableRunError as exc:
        print(f"unstable run: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ModelDomainError, InfeasibleError, NumericalError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
