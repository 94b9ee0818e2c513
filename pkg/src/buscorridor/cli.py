"""``buscorridor`` command line: train, evaluate, baseline, ablate, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corridor import ConfigurationError
from .experiment import evaluate, train, warmup_positions, write_evaluation
from .metrics import EmptyLogError, report_from_csv
from .policy import ActorCritic, NumericalFault
from .scenario import ScenarioError, load_scenario
from .sim import ControllerKind, SimulationError

log = logging.getLogger("buscorridor")

EXIT_CODES = {"usage": 2, "scenario": 3, "checkpoint": 4, "numerical": 5, "io": 6, "simulation": 7}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _load_net(path):
    try:
        net, _, _ = ActorCritic.load(path)
    except FileNotFoundError:
        raise CliError("checkpoint", f"checkpoint not found: {path}") from None
    except (ValueError, KeyError, OSError) as exc:
        raise CliError("checkpoint", f"cannot load checkpoint {path}: {exc}") from None
    return net


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress(every: int):
    def cb(round_idx: int, reward: float):
        if round_idx % every == 0:
            log.info("round %d mean reward %.4f", round_idx, reward)
    return cb


def _strategies(text: str | None):
    if text is None:
        return None
    mask = [s.strip() for s in text.split(",") if s.strip()]
    if not mask:
        raise CliError("usage", "strategy mask is empty")
    return mask


def cmd_train(args) -> dict:
    sc = load_scenario(args.scenario)
    out = _out_dir(args)
    sc.dump(out / "scenario_resolved.yaml")
    res = train(sc, strategies=_strategies(args.strategies), out_dir=out, progress=_progress(100),
                episodes=args.episodes, workers=args.workers, seed=args.seed)
    return {"checkpoint": str(out / "checkpoint.npz"), "episodes": len(res.log_rows),
            "wall_time_s": round(res.wall_time, 3)}


def _evaluate_and_write(sc, args, controller, net=None, strategies=None) -> dict:
    out = _out_dir(args)
    sc.dump(out / "scenario_resolved.yaml")
    ev = evaluate(sc, controller=controller, net=net, strategies=strategies,
                  replications=args.replications, seed=args.seed)
    write_evaluation(ev, out)
    return {"metrics": str(out / "metrics.json"), "pooled_max_deviation": ev.report.pooled_max,
            "pooled_mean_abs_e": ev.report.pooled_e.mean}


def cmd_evaluate(args) -> dict:
    sc = load_scenario(args.scenario)
    kind = ControllerKind(args.controller) if args.controller else sc.controller
    net = None
    if kind == ControllerKind.LEARNED:
        if not args.checkpoint:
            raise CliError("usage", "--checkpoint is required for the learned controller")
        net = _load_net(args.checkpoint)
    elif args.checkpoint:
        raise CliError("usage", f"--checkpoint given but controller is {kind.value!r}")
    return _evaluate_and_write(sc, args, kind, net, _strategies(args.strategies))


def cmd_baseline(args) -> dict:
    sc = load_scenario(args.scenario)
    return _evaluate_and_write(sc, args, ControllerKind(args.controller))


def cmd_ablate(args) -> dict:
    sc = load_scenario(args.scenario)
    mask = _strategies(args.strategies)
    out = _out_dir(args)
    if args.checkpoint:
        net = _load_net(args.checkpoint)
    else:
        net = train(sc, strategies=mask, out_dir=out, progress=_progress(100),
                    episodes=args.episodes, workers=args.workers, seed=args.seed).net
    return _evaluate_and_write(sc, args, ControllerKind.LEARNED, net, mask)


def cmd_report(args) -> dict:
    if args.scenario:
        warmup = warmup_positions(load_scenario(args.scenario))
    else:
        warmup = args.warmup
    report = report_from_csv(args.logs, warmup=warmup, stations_only=not args.all_positions)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.to_json(out)
    return report.to_dict()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="buscorridor", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, checkpoint=False, training=False, replications=True):
        sp.add_argument("--scenario", required=True, help="scenario YAML path or bundled name")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True, help="output directory")
        if training:
            sp.add_argument("--workers", type=int, default=None)
            sp.add_argument("--episodes", type=int, default=None)
        if checkpoint:
            sp.add_argument("--checkpoint", default=None)
        if replications:
            sp.add_argument("--replications", type=int, default=None)

    sp = sub.add_parser("train", help="train a policy with distributed PPO")
    common(sp, training=True, replications=False)
    sp.add_argument("--strategies", default=None, help="comma-separated strategy mask")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="evaluate a controller over seeded replications")
    common(sp, checkpoint=True)
    sp.add_argument("--controller", choices=[k.value for k in ControllerKind], default=None)
    sp.add_argument("--strategies", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("baseline", help="evaluate a classical baseline")
    common(sp)
    sp.add_argument("--controller", choices=["none", "schedule", "headway"], default="none")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("ablate", help="retrain and evaluate under a strategy mask")
    common(sp, checkpoint=True, training=True)
    sp.add_argument("--strategies", required=True, help="e.g. holding or holding,signal,speed")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="recompute deviation statistics from trajectory CSVs")
    sp.add_argument("logs", nargs="+")
    sp.add_argument("--scenario", default=None, help="take the warm-up length from this scenario")
    sp.add_argument("--warmup", type=int, default=30, help="positions excluded at the start")
    sp.add_argument("--all-positions", action="store_true", help="include non-station positions")
    sp.add_argument("--out", default=None, help="metrics JSON path")
    sp.set_defaults(func=cmd_report)
    return p


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _fail("usage", "invalid command line")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except CliError as exc:
        return _fail(exc.category, str(exc))
    except ScenarioError as exc:
        return _fail("scenario", str(exc))
    except NumericalFault as exc:
        return _fail("numerical", str(exc))
    except (SimulationError, EmptyLogError) as exc:
        return _fail("simulation", str(exc))
    except ConfigurationError as exc:
        return _fail("scenario", str(exc))
    except (ValueError, KeyError) as exc:
        return _fail("usage", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
