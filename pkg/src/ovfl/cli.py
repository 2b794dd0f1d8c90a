"""Command-line entry point.

    ovfl run CONFIG [--seed-override N] [--output-dir DIR]
    ovfl presets list
    ovfl presets run NAME [--seed-override N] [--output-dir DIR]

The output directory defaults to ``$OVFL_OUTPUT_DIR`` (then ``./runs``)
unless the config or ``--output-dir`` sets one.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .config import load_config
from .errors import ConfigError, NumericDivergenceError
from .runner import run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def preset_dir() -> Path:
    return Path(str(resources.files("ovfl") / "presets"))


def preset_names() -> List[str]:
    return sorted(p.stem for p in preset_dir().glob("*.yaml"))


def preset_path(name: str) -> Path:
    path = preset_dir() / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path


def _run(path: Path, args) -> int:
    cfg = load_config(path)
    paths = run_experiment(cfg, output_dir=args.output_dir, seed_override=args.seed_override)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovfl", description="Online vertical federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed-override", type=int, default=None, help="run only this seed")
        p.add_argument("--output-dir", default=None, help="directory for CSV outputs")

    run = sub.add_parser("run", help="run a config file")
    run.add_argument("config")
    common(run)

    presets = sub.add_parser("presets", help="shipped figure presets")
    psub = presets.add_subparsers(dest="presets_command", required=True)
    psub.add_parser("list", help="list preset names")
    prun = psub.add_parser("run", help="run a preset")
    prun.add_argument("name")
    common(prun)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _run(Path(args.config), args)
        if args.presets_command == "list":
            for name in preset_names():
                print(name)
            return EXIT_OK
        return _run(preset_path(args.name), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericDivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
