"""Command line: ``python3 -m pfsim <scenario> --config PATH [--seed N] [--out DIR]``."""
import argparse
import sys

from .runner import SCENARIOS, ConfigError, parse_config, run


def build_parser():
    p = argparse.ArgumentParser(prog="pfsim", description="projective-process simulator")
    sub = p.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "selftest", help="JSON run config")
        s.add_argument("--seed", type=int, default=None, help="override master_seed")
        s.add_argument("--out", default=None, help="override output_dir")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config if args.config else {"output_dir": "out/selftest"})
        cfg = cfg.with_overrides(args.seed, args.out, args.scenario)
    except ConfigError as exc:
        print("config invalid:", file=sys.stderr)
        for v in exc.violations:
            print("  " + v, file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"config unreadable: {exc}", file=sys.stderr)
        return 1
    man = run(cfg)
    for w in man.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{cfg.scenario}: wrote {len(man.files)} files to {cfg.output_dir} "
          f"(hash {man.config_hash}, {man.wall_clock:.2f} s)")
    return man.exit_code


if __name__ == "__main__":
    sys.exit(main())
