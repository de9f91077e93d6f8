"""quadsim command line: power-demand prediction, fleet planning, full runs.

Exit codes: 0 success, 2 config/parse error, 3 numerical/coverage error,
4 planner infeasibility. Every file is written inside ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .fleet_planner import FleetScenario, ScenarioError, benchmark_controller, compare, plan_fleet, write_plans_csv
from .fuzzy_encoder import CoverageError, InvalidFamilyError, MembershipFamily
from .markov_chain import ConvergenceError
from .predictive_agent import predict_power_demand
from .trace_model import TraceFormatError, TraceInvariantError, load_trace
from .world_sim import run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4

log = logging.getLogger("quadsim")


class ConfigError(Exception):
    pass


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    out: Path
    seed: int = 0
    scenario: Path | None = None
    trace: Path | None = None
    family: Path | None = None
    horizon: float = 10.0
    split: float = 0.7
    mode: str = "both"
    ticks: int = 600

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        paths = {}
        for name in ("scenario", "trace", "family"):
            value = getattr(ns, name, None)
            if value is None:
                paths[name] = None
                continue
            p = Path(value)
            if not p.is_file():
                raise ConfigError(f"{name} file not found: {p}")
            paths[name] = p
        out = Path(ns.out)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output path exists and is not a directory: {out}")
        return cls(
            subcommand=ns.command,
            out=out,
            seed=getattr(ns, "seed", 0),
            horizon=getattr(ns, "horizon", 10.0),
            split=getattr(ns, "split", 0.7),
            mode=getattr(ns, "mode", "both"),
            ticks=getattr(ns, "ticks", 600),
            **paths,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="train FEM on a trace and score it against persistence")
    p.add_argument("--trace", required=True, help="CSV (t,value) or JSON trace")
    p.add_argument("--family", required=True, help="membership family JSON")
    p.add_argument("--horizon", type=float, default=10.0, help="long-prediction horizon in seconds")
    p.add_argument("--split", type=float, default=0.7, help="training fraction")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    f = sub.add_parser("fleet", help="plan a fleet through a signalized corridor")
    f.add_argument("--scenario", required=True)
    f.add_argument("--mode", choices=("mpc", "benchmark", "both"), default="both")
    f.add_argument("--seed", type=_seed, default=0)
    f.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run the full simulation loop")
    r.add_argument("--scenario", required=True)
    r.add_argument("--ticks", type=int, default=600)
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--out", required=True)
    return parser


def _load_family(path: Path) -> tuple[MembershipFamily, dict]:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: family config must be a JSON object")
    training = {k: doc[k] for k in ("assignment_rule", "zero_row_policy") if k in doc}
    return MembershipFamily.from_dict(doc), training


def cmd_predict(cfg: RunConfig) -> int:
    trace = load_trace(cfg.trace)
    fam, training = _load_family(cfg.family)
    report = predict_power_demand(trace, fam, cfg.split, cfg.horizon, **training)
    paths = report.write(cfg.out)
    r = report.rmse
    print(f"one-step RMSE   fem {r['fem_one_step']:.6f}   persistence {r['persistence_one_step']:.6f}")
    print(f"{cfg.horizon:g} s RMSE   fem {r['fem_horizon']:.6f}   persistence {r['persistence_horizon']:.6f}")
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_fleet(cfg: RunConfig) -> int:
    scenario = FleetScenario.load(cfg.scenario)
    cfg.out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    mpc = bench = None
    if cfg.mode in ("mpc", "both"):
        mpc = plan_fleet(scenario)
        write_plans_csv(mpc, cfg.out / "plans_mpc.csv")
        flagged = [p.vehicle_id for p in mpc if p.infeasible]
        if flagged:
            print(f"infeasible: vehicles {flagged} fell back to the benchmark controller", file=sys.stderr)
            status = EXIT_INFEASIBLE
    if cfg.mode in ("benchmark", "both"):
        bench = benchmark_controller(scenario)
        write_plans_csv(bench, cfg.out / "plans_benchmark.csv")
    if mpc is not None and bench is not None:
        comparison = compare(scenario, mpc, bench)
        (cfg.out / "comparison.json").write_text(json.dumps(comparison, indent=1, sort_keys=True) + "\n")
        for row in comparison["vehicles"]:
            m, b = row["mpc"], row["benchmark"]
            print(f"vehicle {row['vehicle_id']}: stops mpc {m['stops']} benchmark {b['stops']}, "
                  f"energy mpc {m['energy_proxy']:.3f} benchmark {b['energy_proxy']:.3f}")
    else:
        for p in mpc or bench:
            print(f"vehicle {p.vehicle_id} ({p.controller}): stops {p.stops}, min speed {p.speeds.min():.3f}")
    return status


def cmd_run(cfg: RunConfig) -> int:
    scenario = FleetScenario.load(cfg.scenario)
    if cfg.ticks < 0:
        raise ConfigError("--ticks must be >= 0")
    qlog = run(scenario, cfg.ticks, cfg.seed)
    qlog.write(cfg.out, scenario)
    summary = qlog.summary(scenario)
    rate = summary["gate_acceptance_rate"]
    print("gate acceptance rate " + ("n/a" if rate is None else f"{rate:.4f}"))
    for v in summary["vehicles"]:
        print(f"vehicle {v['vehicle_id']}: stops {v['stops']}")
    return EXIT_OK


COMMANDS = {"predict": cmd_predict, "fleet": cmd_fleet, "run": cmd_run}


def _configure_logging():
    level = os.environ.get("QUAD_SIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = RunConfig.from_args(ns)
        return COMMANDS[cfg.subcommand](cfg)
    except CoverageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ScenarioError, TraceFormatError, TraceInvariantError, InvalidFamilyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
