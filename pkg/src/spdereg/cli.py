"""Command-line entry point: ``spdereg run | examples | verify``."""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .errors import ConfigError, SpderegError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdereg", description="SPDE transition-semigroup regularity experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to a YAML config, or the name of a bundled example")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    run.add_argument("--out", default=None, help="output directory")

    sub.add_parser("examples", help="list the bundled example configs")

    ver = sub.add_parser("verify", help="run the acceptance checks")
    ver.add_argument("--level", choices=("smoke", "full"), default="smoke")
    ver.add_argument("--workers", type=int, default=1)
    ver.add_argument("--criteria", type=int, nargs="*", default=None, help="subset of criterion numbers")
    return p


def _resolve(config: str) -> str:
    from pathlib import Path

    from .runner import bundled_config

    if Path(config).exists():
        return config
    try:
        return str(bundled_config(config))
    except FileNotFoundError:
        return config


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.verb == "run":
        from .runner import run_experiment

        if args.workers is not None and args.workers < 1:
            print("error: --workers must be at least 1", file=sys.stderr)
            return 2
        try:
            m = run_experiment(_resolve(args.config), workers=args.workers, seed=args.seed, out=args.out)
        except ConfigError as exc:
            print(f"config error in field '{exc.field}': {exc}", file=sys.stderr)
            return 2
        except SpderegError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"flags: {m.flags}")
        for name, path in sorted(m.outputs.items()):
            print(f"{name}: {path}")
        print(f"config hash {m.config_hash}, seed {m.seed}, {m.workers} worker(s), {m.wall_clock:.1f}s")
        return 0

    if args.verb == "examples":
        from .runner import list_examples

        entries = list_examples()
        for e in entries:
            print(f"{e['name']:<18} alpha={e['alpha']:<5} bound={e['bound_family']:<20} {e['topic']}")
            print(f"{'':<18} expected: {e['expected']}")
            print(f"{'':<18} config:   {e['config']}")
        print(f"{len(entries)} examples")
        return 0

    from .verify import verify_suite

    results = verify_suite(args.level, workers=args.workers, numbers=args.criteria)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
