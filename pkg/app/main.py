from typing import List, Optional
from pathlib import Path
import argparse
import logging
import sys

from app.config import RunConfig, dump_config, load_config
from app.errors import ConfigError
from app.models import ExitCode
from app.scenarios import SCENARIOS
from app.scenarios.common import write_json

logger = logging.getLogger(__name__)

VERBS = {
    "run": None,
    "audit": "audit",
    "structure-check": "structure_check",
    "plot-data": "plot_data",
    "dvm-table": "dvm_table",
}


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzy-boltzmann",
        description="Structure-preserving solver and verification toolkit for the fuzzy Boltzmann equation",
    )
    subparsers = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sub = subparsers.add_parser(verb)
        sub.add_argument("--config", help="TOML or JSON run configuration")
        sub.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE", help="section.key=value, repeatable"
        )
        sub.add_argument("--out", help="output directory (default: output.out_dir)")
        sub.add_argument("--workers", type=int, help="threads for tuple evaluation")
        sub.add_argument("--seed", type=int, help="random seed")
        if verb == "plot-data":
            sub.add_argument("input", nargs="?", help="diagnostics stream (default: the configured one)")
        if verb == "dvm-table":
            sub.add_argument("target", nargs="?", help="table file (default: <out>/dvm_table.txt)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: List[str] = list(args.override)
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.out_dir={args.out}")
    verb_scenario = VERBS[args.verb]
    if verb_scenario is not None:
        overrides.append(f"scenario={verb_scenario}")
    config = load_config(args.config, overrides)
    if config.scenario not in SCENARIOS:
        raise ConfigError(f"Unknown scenario '{config.scenario}', expected one of {sorted(SCENARIOS)}")
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line entry point

    Returns:
        Exit code: 0 when every criterion passed, otherwise the code of the first failure
    """
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
    except ConfigError as e:
        configure_logging("INFO")
        logger.error(str(e))
        return int(ExitCode.CONFIG)

    configure_logging(config.log_level)
    out_dir = Path(config.output.out_dir)
    dump_config(config, out_dir / "config.json")
    logger.info(f"Starting scenario {config.scenario} (seed={config.seed}, workers={config.workers})")

    options = {}
    if args.verb == "plot-data" and args.input:
        options["source"] = Path(args.input)
    if args.verb == "dvm-table" and args.target:
        options["target"] = Path(args.target)
    report = SCENARIOS[config.scenario](config, out_dir, **options)
    write_json(report, out_dir / f"{config.scenario}_report.json")
    return int(report.exit_code)


if __name__ == "__main__":
    sys.exit(main())
