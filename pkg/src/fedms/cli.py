"""Command-line entry point: ``fedms run | ablate | axioms``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .axioms import run_axiom_suite
from .config import ConfigError, parse_config
from .engine import ExperimentReport, ablation_without_mavericks, run_experiment

OUT_ENV = "FEDMS_OUT_DIR"

log = logging.getLogger("fedms")


def _num(x: float) -> str:
    return f"{x:.9g}"


def rounds_header(num_classes: int, num_clients: int) -> list[str]:
    return (
        ["round", "test_acc"]
        + [f"acc_c{c}" for c in range(num_classes)]
        + [f"beta_c{c}" for c in range(num_classes)]
        + ["selected", "best_set"]
        + [f"r_{i}" for i in range(num_clients)]
    )


def write_rounds_csv(report: ExperimentReport, path: Path) -> None:
    n = report.num_clients
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rounds_header(report.num_classes, n))
        for rec in report.records:
            rewards = ["" if i not in rec.rewards else _num(rec.rewards[i]) for i in range(n)]
            w.writerow(
                [rec.round, _num(rec.test_acc)]
                + [_num(a) for a in rec.val_class_acc]
                + [_num(b) for b in rec.beta]
                + [";".join(map(str, rec.cohort)), ";".join(map(str, rec.best_set))]
                + rewards
            )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _resolve_out(out: str | None) -> Path:
    chosen = out or os.environ.get(OUT_ENV)
    if not chosen:
        raise ConfigError(f"no output directory: pass --out or set {OUT_ENV}")
    p = Path(chosen)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit_report(report: ExperimentReport, out: Path) -> None:
    write_rounds_csv(report, out / "rounds.csv")
    _write_json(out / "summary.json", report.summary())


def _progress(rec) -> None:
    log.info("round %3d  test_acc=%.4f  cohort=%s  best=%s", rec.round, rec.test_acc, rec.cohort, rec.best_set)


def cmd_run(config_path, out_dir=None, seed: int | None = None) -> int:
    started = _now()
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out = _resolve_out(out_dir)
    report = run_experiment(cfg, progress=_progress)
    _emit_report(report, out)
    _write_json(
        out / "manifest.json",
        {
            "command": "run",
            "config_path": str(config_path),
            "seed": cfg.seed,
            "version": __version__,
            "started": started,
            "finished": _now(),
            "output_dir": str(out),
        },
    )
    return 0


def cmd_ablate(config_path, out_dir=None, seed: int | None = None) -> int:
    started = _now()
    cfg = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if not cfg.maverick_spec:
        raise ConfigError("ablate needs at least one Maverick (set [data] mavericks)")
    out = _resolve_out(out_dir)
    full = run_experiment(cfg, progress=_progress)
    ablated = ablation_without_mavericks(cfg, progress=_progress)
    for name, rep in (("all_clients", full), ("without_mavericks", ablated)):
        (out / name).mkdir(exist_ok=True)
        _emit_report(rep, out / name)
    _write_json(
        out / "delta.json",
        {
            "all_clients_final_acc": full.final_test_acc,
            "without_mavericks_final_acc": ablated.final_test_acc,
            "delta": full.final_test_acc - ablated.final_test_acc,
        },
    )
    _write_json(
        out / "manifest.json",
        {
            "command": "ablate",
            "config_path": str(config_path),
            "seed": cfg.seed,
            "paired_seeds": {"all_clients": cfg.seed, "without_mavericks": cfg.seed},
            "version": __version__,
            "started": started,
            "finished": _now(),
            "output_dir": str(out),
        },
    )
    return 0


def cmd_axioms(max_players: int, trials: int, seed: int, stream=None) -> int:
    stream = stream or sys.stdout
    if max_players < 1 or trials < 1:
        raise ConfigError("max-players and trials must be >= 1")
    report = run_axiom_suite(max_players, trials, seed)
    ok = report.passed()
    print(f"{'axiom':<12} {'worst error':>12}  result", file=stream)
    for name, err in report.worst.items():
        print(f"{name:<12} {err:12.3e}  {'PASS' if ok[name] else 'FAIL'}", file=stream)
    print(f"{report.trials} games, players 1..{max_players}, seed {seed}", file=stream)
    return 0 if all(ok.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedms", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every round")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    r.add_argument("--seed", type=int, help="override the master seed")

    a = sub.add_parser("ablate", help="run with and without the Maverick clients")
    a.add_argument("config")
    a.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    a.add_argument("--seed", type=int)

    x = sub.add_parser("axioms", help="check Shapley axioms on random scripted games")
    x.add_argument("--max-players", type=int, default=6)
    x.add_argument("--trials", type=int, default=100)
    x.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.out, args.seed)
        return cmd_axioms(args.max_players, args.trials, args.seed)
    except Exception as e:  # every failure becomes a diagnostic + nonzero exit
        print(f"fedms: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
