import argparse
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import List, Sequence

from ..errors import LabError, MissingInputError
from .checkpoint import atomic_write_text

logger = logging.getLogger(__name__)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["%.17g" % v for v in row])
    return buf.getvalue()


def _log(x: float) -> float:
    return math.log(x) if x > 0 else float("nan")


def _decay(run_dir: Path) -> Path:
    with (run_dir / "monitors.csv").open("r", newline="") as f:
        rows = list(csv.DictReader(f))
    data = [(float(r["t"]), math.log(float(r["deficit"]))) for r in rows if float(r["deficit"]) > 0]
    return atomic_write_text(run_dir / "decay.csv", _csv_text(("t", "log_F_deficit"), data))


def _scaling(run_dir: Path) -> Path:
    with (run_dir / "foliation.json").open("r") as f:
        report = json.load(f)
    rows = [(leaf["sigma"], math.log(leaf["sigma"]), leaf["aring_max"], _log(leaf["aring_max"]),
             leaf["grad_aring_max"], _log(leaf["grad_aring_max"]), leaf["f_sigma"])
            for leaf in report["leaves"]]
    header = ("sigma", "log_sigma", "aring_max", "log_aring_max", "grad_aring_max", "log_grad_aring_max", "f_sigma")
    return atomic_write_text(run_dir / "scaling.csv", _csv_text(header, rows))


def _spectrum(run_dir: Path) -> Path:
    with (run_dir / "spectrum.json").open("r") as f:
        reports = json.load(f)["reports"]
    rows = [(r["sigma"], r["eta0"], r["eta0_predicted"], r["mu0"], r["mu0"] * r["sigma"] ** 3,
             r["h0_structure_ratio"]) for r in reports]
    header = ("sigma", "eta0", "eta0_predicted", "mu0", "mu0_sigma3", "h0_structure_ratio")
    return atomic_write_text(run_dir / "spectrum_vs_sigma.csv", _csv_text(header, rows))


def emit_plot_data(run_dir) -> List[Path]:
    """Tidy CSVs for decay curves, leaf scaling and spectra found in a finished run."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise MissingInputError(f"run directory not found: {run_dir}")
    produced = []
    if (run_dir / "monitors.csv").exists():
        produced.append(_decay(run_dir))
    if (run_dir / "foliation.json").exists():
        produced.append(_scaling(run_dir))
    if (run_dir / "spectrum.json").exists():
        produced.append(_spectrum(run_dir))
    if not produced:
        raise MissingInputError(f"no monitors, foliation or spectrum results in {run_dir}")
    for p in produced:
        logger.info("wrote %s", p)
    return produced


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Emit plot-ready CSVs for a finished run")
    parser.add_argument("run_dir", help="Run directory produced by hmcf-lab")
    args = parser.parse_args(argv)
    try:
        produced = emit_plot_data(args.run_dir)
    except LabError as exc:
        print(f"Error: {exc}")
        return exc.exit_code
    for p in produced:
        print(f"Wrote {p}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
