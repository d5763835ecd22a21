import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config, validate_config
from .errors import ConfigError, LabError, MissingInputError
from .pipeline.plot_data import emit_plot_data
from .run_pipeline import run

logger = logging.getLogger(__name__)

EXPERIMENT_COMMANDS = ("flow", "foliate", "spectrum", "center", "check")


def _configure_logging(level: int) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmcf-lab",
                                     description="Harmonic mean curvature flow lab for asymptotically flat 3-manifolds")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENT_COMMANDS:
        p = sub.add_parser(name, help=f"Run a '{name}' experiment")
        p.add_argument("config", nargs="?", help="JSON run config (defaults apply when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key, e.g. --set flow.stop_tol=1e-8")
        p.add_argument("--output-dir", help="Run directory (relative paths go under $HMCF_LAB_OUTPUT_ROOT)")
        p.add_argument("--workers", type=int, help="Process pool size for sigma sweeps")
        p.add_argument("--dump-nodes", action="store_true", help="Write the per-node curvature CSV")

    p = sub.add_parser("plot-data", help="Emit plot-ready CSVs for a finished run")
    p.add_argument("run_dir")
    p = sub.add_parser("resume", help="Continue an interrupted run from its checkpoint and stored leaves")
    p.add_argument("run_dir")
    return parser


def _experiment_config(args):
    overrides = [f"kind={json.dumps(args.command)}"] + list(args.overrides)
    if args.output_dir:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    if args.workers:
        overrides.append(f"workers={args.workers}")
    if args.dump_nodes:
        overrides.append("dump_nodes=true")
    return load_config(args.config, overrides)


def _resume_config(run_dir: str):
    path = Path(run_dir) / "config.json"
    if not path.exists():
        raise MissingInputError(f"{run_dir} holds no config.json to resume from")
    try:
        with path.open("r") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    data["output_dir"] = str(Path(run_dir).resolve())
    return validate_config(data)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _configure_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    try:
        if args.command == "plot-data":
            for p in emit_plot_data(args.run_dir):
                print(f"Wrote {p}")
            return 0
        if args.command == "resume":
            manifest = run(_resume_config(args.run_dir), resume=True)
        else:
            manifest = run(_experiment_config(args))
    except LabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    print(json.dumps(manifest.convergence, indent=2))
    return manifest.status


if __name__ == "__main__":
    sys.exit(main())
