"""``dicekit <scenario> --config FILE`` entry point and scenario runners."""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coalescent import TypedPartition, coalescent_consistency_test, simulate_coalescent
from .config import SCENARIO_FIELDS, SCENARIOS, ScenarioConfig, parse_config
from .duality import convergence_check, moment_duality_check, simulate_frequency_sde
from .errors import ConfigError, DiceError, NonLumpableError
from .rates import (
    RESIDUAL_TOL,
    build_generator,
    check_consistency_equation,
    check_permutation_commutation,
    lumped_generator,
)
from .simulate import SimulationSpec, simulate_graphical, write_events_jsonl

logger = logging.getLogger("dicekit")

EXIT_CODES = {"pass": 0, "fail": 1, "warn": 2}
EXIT_CONFIG = 64
EXIT_NOINPUT = 66
EXIT_RUNTIME = 70
EXCHANGEABILITY_TOL = 1e-12
OUT_ENV = "DICEKIT_OUT"
DEFAULT_OUT = "dicekit-out"


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc))
    return when.isoformat(timespec="seconds")


def _plain(obj):
    """Convert numpy scalars/arrays so ``json`` can write them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _verify_consistency(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    rep = check_consistency_equation(cfg.params, f["n_max"])
    n = f["n"]
    Q = build_generator(n, cfg.params)
    Q.to_csv(out / "generator.csv")
    lumping = {}
    ok = rep.passed()
    for m in ([f["m"]] if f.get("m") else range(1, n)):
        try:
            diff = np.abs(lumped_generator(Q, m).Q - build_generator(m, cfg.params).Q).max()
            lumping[str(m)] = float(diff)
            ok = ok and diff <= RESIDUAL_TOL
        except NonLumpableError as exc:
            lumping[str(m)] = str(exc)
            ok = False
    worst = None
    if rep.worst is not None:
        b, K, j = rep.worst
        worst = {"b": list(b), "K": [list(r) for r in K], "j": j + 1}
    metrics = {"consistency_max_residual": rep.max_residual, "equations": rep.equations,
               "worst_equation": worst, "lumping_max_residual": lumping, "tolerance": RESIDUAL_TOL}
    return metrics, "pass" if ok else "fail"


def _verify_exchangeability(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    n = cfg.fields["n"]
    Q = build_generator(n, cfg.params)
    Q.to_csv(out / "generator.csv")
    worst = max((check_permutation_commutation(Q, s) for s in itertools.permutations(range(n))),
                default=0.0)
    metrics = {"max_residual": worst, "permutations": len(list(itertools.permutations(range(n)))),
               "tolerance": EXCHANGEABILITY_TOL}
    return metrics, "pass" if worst <= EXCHANGEABILITY_TOL else "fail"


def _simulate_dice(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    spec = SimulationSpec(f["n"], cfg.params, f["T"], cfg.epsilon, cfg.seed)
    traj = simulate_graphical(spec, [v - 1 for v in f["x0"]])
    traj.to_csv(out / "trajectory.csv")
    write_events_jsonl(traj.event_records(), out / "events.jsonl")
    trunc = cfg.params.nu.truncate(cfg.epsilon)
    metrics = {"events": len(traj.events),
               "effective_events": sum(1 for ev in traj.events if ev.moves),
               "final": [v + 1 for v in traj.final()],
               "truncation_mass": trunc.mass, "neglected_integrability": trunc.neglected}
    return metrics, "pass"


def _frequency_sde(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    path = simulate_frequency_sde(f["r0"], cfg.params, f["T"], cfg.epsilon, cfg.seed)
    rows = [[_fmt(t)] + [_fmt(v) for v in r] for t, r in zip(path.times, path.values)]
    rows.append([_fmt(f["T"])] + [_fmt(v) for v in path.final()])
    _write_rows(out / "trajectory.csv", ["time"] + [f"r{i + 1}" for i in range(cfg.d)], rows)
    metrics = {"jumps": len(path.jump_times), "final": path.final().tolist(),
               "neglected_integrability": cfg.params.nu.truncate(cfg.epsilon).neglected}
    return metrics, "pass"


def _duality_check(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    rep = moment_duality_check(f["r0"], f["b0"], f["T"], cfg.params, f["paths"], cfg.seed,
                               cfg.epsilon)
    return rep.as_dict(), rep.verdict


def _convergence_check(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    rep = convergence_check(cfg.params, f["n_list"], f["T"], f["paths"], cfg.seed, f["r0"],
                            cfg.epsilon)
    return rep.as_dict(), rep.verdict


def _coalescent(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    pi0 = TypedPartition.parse(f["partition"])
    traj = simulate_coalescent(pi0, cfg.coalescent_params(), f["T"], cfg.seed, cfg.epsilon)
    traj.to_csv(out / "trajectory.csv")
    metrics = {"events": len(traj.events),
               "mergers": sum(1 for ev in traj.events if ev.kind == "coalescence"),
               "switches": sum(1 for ev in traj.events if ev.kind == "switch"),
               "final": traj.final().serialize()}
    return metrics, "pass"


def _coalescent_consistency(cfg: ScenarioConfig, out: Path) -> tuple[dict, str]:
    f = cfg.fields
    rep = coalescent_consistency_test(cfg.coalescent_params(), f["n"], f["m"], f["T"], f["paths"],
                                      cfg.seed, [v - 1 for v in f["x0"]], cfg.epsilon)
    return rep.as_dict(), rep.verdict


RUNNERS = {
    "verify-consistency": _verify_consistency,
    "verify-exchangeability": _verify_exchangeability,
    "simulate-dice": _simulate_dice,
    "frequency-sde": _frequency_sde,
    "duality-check": _duality_check,
    "convergence-check": _convergence_check,
    "coalescent": _coalescent,
    "coalescent-consistency": _coalescent_consistency,
}


def run_scenario(cfg: ScenarioConfig, out_dir) -> dict:
    """Run ``cfg``, write its artifacts into ``out_dir`` and return the result record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _timestamp()
    logger.info("running %s (hash %s) into %s", cfg.scenario, cfg.scenario_hash[:12], out)
    try:
        metrics, verdict = RUNNERS[cfg.scenario](cfg, out)
    except DiceError as exc:
        raise type(exc)(f"{cfg.scenario}: {exc}") from exc
    record = {"scenario": cfg.scenario, "scenario_hash": cfg.scenario_hash,
              "started": started, "finished": _timestamp(), "version": __version__,
              "config": cfg.resolved, "metrics": _plain(metrics), "verdict": verdict}
    with open(out / "result.jsonl", "w") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info("%s finished: %s", cfg.scenario, verdict)
    return record


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicekit", description=__doc__)
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML scenario file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--paths", type=int)
        p.add_argument("--epsilon", type=float)
        # also accepted after the subcommand
        p.add_argument("--log-level", default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"dicekit: cannot read config: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    overrides = {"seed": args.seed, "epsilon": args.epsilon}
    if args.paths is not None:
        if "paths" not in SCENARIO_FIELDS[args.scenario]:
            print(f"dicekit: --paths does not apply to {args.scenario}", file=sys.stderr)
            return EXIT_CONFIG
        overrides["paths"] = args.paths
    try:
        cfg = parse_config(text, overrides, scenario=args.scenario)
    except ConfigError as exc:
        print(f"dicekit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output or os.environ.get(OUT_ENV) or DEFAULT_OUT
    try:
        record = run_scenario(cfg, out)
    except DiceError as exc:
        print(f"dicekit: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.scenario}: {record['verdict']} (hash {record['scenario_hash'][:12]}, out {out})")
    return EXIT_CODES[record["verdict"]]


if __name__ == "__main__":
    sys.exit(main())
