"""Run the corridor experiment suite and write every artifact under one directory.

    python scripts/reproduce_experiments.py --out runs/ [--episodes 2000] [--only baselines]

Sections: baselines (general scenario, three classical controllers),
general (trained policy), volume (station-varying volume cost) and
ablation (single-strategy retraining under high volume cost).
"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from buscorridor.experiment import evaluate, train, write_evaluation
from buscorridor.scenario import load_scenario
from buscorridor.sim import ControllerKind

log = logging.getLogger("reproduce")

SECTIONS = ("baselines", "general", "volume", "ablation")
MASKS = {"holding": ["holding"], "speed": ["speed"], "signal": ["signal"], "all": ["holding", "signal", "speed"]}


def _summary(ev) -> dict:
    r = ev.report
    return {"pooled_max_e": r.pooled_e.max, "pooled_max_d": r.pooled_d.max, "pooled_mean_e": r.pooled_e.mean,
            "pooled_p95_e": r.pooled_e.p95}


def run_baselines(out: Path, args) -> dict:
    sc = load_scenario("paper-general")
    res = {}
    for kind in (ControllerKind.NO_CONTROL, ControllerKind.SCHEDULE, ControllerKind.HEADWAY):
        ev = evaluate(sc, controller=kind, replications=args.replications)
        write_evaluation(ev, out / "baselines" / kind.value)
        res[kind.value] = _summary(ev)
    return res


def run_trained(out: Path, name: str, scenario: str, args, strategies=None) -> dict:
    sc = load_scenario(scenario)
    d = out / name
    result = train(sc, strategies=strategies, out_dir=d, episodes=args.episodes, seed=args.seed)
    ev = evaluate(sc, net=result.net, strategies=strategies, replications=args.replications)
    write_evaluation(ev, d)
    return {**_summary(ev), "train_wall_time_s": result.wall_time}


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="runs")
    p.add_argument("--episodes", type=int, default=None, help="override training episodes")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--only", choices=SECTIONS, action="append")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    todo = args.only or SECTIONS
    summary = {}
    if "baselines" in todo:
        log.info("baselines")
        summary["baselines"] = run_baselines(out, args)
    if "general" in todo:
        log.info("training on paper-general")
        summary["general"] = run_trained(out, "general", "paper-general", args)
    if "volume" in todo:
        log.info("training on paper-varying-volume")
        summary["volume"] = run_trained(out, "volume", "paper-varying-volume", args)
    if "ablation" in todo:
        summary["ablation"] = {}
        for name, mask in MASKS.items():
            log.info("ablation %s", name)
            summary["ablation"][name] = run_trained(out, f"ablation/{name}", "paper-highvolume", args, mask)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
