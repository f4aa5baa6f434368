"""Command-line entry point: ``remos <subcommand> [options] [key=value ...]``."""

import argparse
import json
import sys
from collections.abc import Sequence

import torch
from loguru import logger
from pydantic import ValidationError

from app.__about__ import __version__
from app.config import Config
from app.models.configs import RunConfig
from app.models.errors import ConfigError, RemosError
from app.pocketflow.flows.pipeline import pipeline_flow
from app.services.autodiff import configure_precision
from app.utils.logging import setup_logging
from app.utils.settings_file import parse_overrides

SUBCOMMANDS = {
    "gen-data": "generate synthetic interaction pairs and a dataset manifest",
    "train": "train one cascade stage (stage=body or stage=hands)",
    "sample": "generate the reactor for an actor motion file",
    "edit": "generate a reactor that honours an edit constraint file",
    "eval": "write a metrics report",
    "inspect": "dump schedules, masks, trajectories, loss curves and settings",
}
INSPECT_FLAGS = {
    "schedule": "schedule",
    "masks": "masks",
    "trajectory": "trajectory",
    "params": "params",
    "loss_curve": "loss-curve",
    "config_dump": "config",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", help="key=value settings file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--out", dest="out_dir", default="out", help="output directory")
    common.add_argument("overrides", nargs="*", metavar="key=value")

    parser = argparse.ArgumentParser(
        prog="remos", description="Motion-conditioned reaction synthesis."
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="subcommand", required=True)
    for name, summary in SUBCOMMANDS.items():
        command = commands.add_parser(name, parents=[common], help=summary)
        if name == "inspect":
            for flag, target in INSPECT_FLAGS.items():
                command.add_argument(
                    f"--{flag.replace('_', '-')}",
                    dest=flag,
                    action="store_true",
                    help=f"write the {target} dump",
                )
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    targets = tuple(
        target for flag, target in INSPECT_FLAGS.items() if getattr(args, flag, False)
    )
    try:
        return RunConfig(
            subcommand=args.subcommand,
            config_path=args.config_path,
            out_dir=args.out_dir,
            seed=args.seed,
            overrides=parse_overrides(args.overrides),
            inspect_targets=targets,
        )
    except ValidationError as e:
        problems = "; ".join(error["msg"] for error in e.errors())
        msg = f"invalid arguments: {problems}"
        raise ConfigError(msg) from e


def _report_error(
    error: str, error_type: str, exit_code: int, node: str | None
) -> int:
    message = {
        "error": error_type,
        "message": error,
        "node": node,
        "exit_code": exit_code,
    }
    sys.stderr.write(json.dumps(message) + "\n")
    return exit_code


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        config = Config()
        log_file = config.logs_dir / "remos.log" if config.debug else None
        setup_logging(config.log_level, log_file)
        torch.set_num_threads(config.threads)
        configure_precision(config.dtype)
        run = _run_config(args)
    except RemosError as e:
        return _report_error(str(e), type(e).__name__, e.exit_code, None)

    store = pipeline_flow().run({"run": run, "config": config})
    if store.get("action") == "error":
        return _report_error(
            store.get("error", "unknown error"),
            store.get("error_type", "Error"),
            store.get("exit_code", 1),
            store.get("error_node"),
        )

    outputs = store.get("outputs", [])
    for path in outputs:
        sys.stdout.write(f"{path}\n")
    logger.info(f"{run.subcommand} finished with {len(outputs)} outputs")
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
