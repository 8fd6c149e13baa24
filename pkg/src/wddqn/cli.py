"""Command line entry point: ``wddqn run|sweep|compare|check``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _progress(every: int):
    def report(rec):
        if (rec.episode + 1) % every == 0:
            logging.info("episode %d: reward %.1f, steps %d, ratio %.2f, eps %.3f",
                         rec.episode + 1, rec.total_reward, rec.steps, rec.efficiency_ratio, rec.epsilon)
    return report


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    summary = harness.run(cfg, seed, args.out, progress=_progress(args.log_every))
    w = summary.final_window
    print(f"{cfg.agent_kind} {cfg.env_name} seed={seed}: final window mean reward {w.mean:.2f} "
          f"(min {w.min:.2f}, max {w.max:.2f}), mean ratio {summary.ratio_windows[-1].mean:.3f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    summaries = harness.sweep(cfg, args.seeds, args.out, jobs=args.jobs)
    for s in summaries:
        print(f"seed={s.seed}: final window mean reward {s.final_window.mean:.2f}, "
              f"mean ratio {s.ratio_windows[-1].mean:.3f}")
    return 0


def cmd_compare(args) -> int:
    n = harness.compare(args.inputs, args.out)
    print(f"merged {n} series into {args.out}")
    return 0


def cmd_check(args) -> int:
    from . import checks
    failed = 0
    for name, ok, detail in checks.run_checks(quick=args.quick):
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wddqn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one training run")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="directory for episodes.csv / summary.csv")
    r.add_argument("--log-every", type=int, default=100)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="independent runs over several seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=_seeds)
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="merge run directories into one CSV")
    c.add_argument("--inputs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("check", help="built-in invariant and oracle checks")
    k.add_argument("--quick", action="store_true", help="smaller sample sizes")
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
