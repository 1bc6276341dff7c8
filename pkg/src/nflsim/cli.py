"""Command-line entry points: run a simulation, compare runs, list presets."""

from __future__ import annotations

import argparse
import sys
import time

from .artifact import compare_runs, format_compare, write_run
from .config import PRESET_HELP, load_config, preset
from .engine import run_simulation
from .errors import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nflsim")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one simulation and write its artifact")
    src = run_p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a JSON config file")
    src.add_argument("--preset", help="named scenario, e.g. ideal or vanilla_mix(0.5)")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--mode", default=None, help="override the operating mode")
    run_p.add_argument("--out", required=True, help="output directory for the run artifact")
    run_p.add_argument("--workers", type=int, default=1, help="client-update worker threads")

    cmp_p = sub.add_parser("compare", help="diff two run artifacts")
    cmp_p.add_argument("run_a")
    cmp_p.add_argument("run_b")

    sub.add_parser("presets", help="list available presets")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else preset(args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
    cfg.validate()
    start = time.perf_counter()
    result = run_simulation(cfg, workers=max(1, args.workers))
    elapsed = time.perf_counter() - start
    out = write_run(result, args.out, workers=max(1, args.workers))
    s = result.summary
    print(f"wrote {out} ({elapsed:.1f}s, {cfg.rounds} rounds, mode={cfg.mode}, seed={cfg.seed})")
    print(
        f"final: acc={s['final_acc']:.4f} beta={s['final_beta_true']:+.4f} "
        f"beta_guard={s['final_beta_guard']:+.4f} reports={s['report_rounds']} "
        f"cancels={s['cancel_rounds']}"
    )
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            print(format_compare(compare_runs(args.run_a, args.run_b)))
            return 0
        if args.command == "presets":
            for name, text in PRESET_HELP.items():
                print(f"{name:20s} {text}")
            return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
