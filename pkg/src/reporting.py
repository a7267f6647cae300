"""
Result Files

Writes errors.csv, fit.csv, iterates.csv and a log-log SVG plot for a run,
and reads errors.csv back.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "okl"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .harness import BoundReport, RateFit, aggregate  # noqa: E402
from .metrics import ErrorRecord  # noqa: E402

logger = logging.getLogger(__name__)

ERRORS_COLUMNS = ["t", "norm", "mean", "se", "bound", "seeds", "algorithm"]
FIT_COLUMNS = ["norm", "slope", "intercept", "r_squared", "theory_exponent"]
ITERATES_COLUMNS = ["t", "mean", "se", "bound", "seeds", "algorithm"]
FLOAT_FORMAT = "%.12g"


@dataclass
class OutputPaths:
    """Files written for one run."""

    errors_csv: Path
    fit_csv: Path
    plot_svg: Path
    iterates_csv: Optional[Path] = None


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e


def errors_table(aggregated: pd.DataFrame, report: Optional[BoundReport]) -> pd.DataFrame:
    """One row per checkpoint per error norm (rho, K), with the bound where one applies."""
    rows = aggregated[aggregated["norm"].isin(["rho", "K"])].copy()
    rows["bound"] = [
        report.bound_for(norm, int(t)) if report is not None else math.nan
        for norm, t in zip(rows["norm"], rows["t"])
    ]
    return rows[ERRORS_COLUMNS].reset_index(drop=True)


def fit_table(fits: Sequence[RateFit]) -> pd.DataFrame:
    return pd.DataFrame(
        [[f.norm, f.slope, f.intercept, f.r_squared, f.theory_exponent] for f in fits],
        columns=FIT_COLUMNS,
    )


def write_outputs(report: Optional[BoundReport], records: Sequence[ErrorRecord], out_dir: Union[str, Path],
                  fits: Sequence[RateFit] = ()) -> OutputPaths:
    """Write the run's CSV files and plot into out_dir (created if missing)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"Cannot create output directory {out_dir}: {e}") from e

    aggregated = aggregate(records)
    paths = OutputPaths(
        errors_csv=out_dir / "errors.csv",
        fit_csv=out_dir / "fit.csv",
        plot_svg=out_dir / "errors.svg",
    )
    _write_csv(errors_table(aggregated, report), paths.errors_csv)
    _write_csv(fit_table(fits), paths.fit_csv)

    iterates = aggregated[aggregated["norm"] == "iterate"].copy()
    if not iterates.empty:
        iterates["bound"] = [report.bound_for("iterate", int(t)) if report else math.nan for t in iterates["t"]]
        paths.iterates_csv = out_dir / "iterates.csv"
        _write_csv(iterates[ITERATES_COLUMNS], paths.iterates_csv)

    plot_errors(aggregated, report, paths.plot_svg)
    logger.info(f"Wrote {paths.errors_csv}, {paths.fit_csv} and {paths.plot_svg}")
    return paths


def read_errors_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Parse errors.csv back into the aggregate layout (empty cells become NaN)."""
    frame = pd.read_csv(path, dtype={"norm": str, "algorithm": str})
    if list(frame.columns) != ERRORS_COLUMNS:
        raise ValueError(f"{path} does not have the errors.csv header")
    return frame


def plot_errors(aggregated: pd.DataFrame, report: Optional[BoundReport], path: Union[str, Path]) -> Path:
    """
    Log-log plot of mean error with a mean + 2 SE band edge and the bound curve.

    Each series carries a gid (series-<norm>-mean / -upper / -bound) so it can be
    found in the SVG.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    plotted = False
    for norm, style in (("rho", "C0"), ("K", "C1")):
        rows = aggregated[(aggregated["norm"] == norm) & (aggregated["t"] > 0)].sort_values("t")
        if rows.empty:
            continue
        t = rows["t"].to_numpy(dtype=float)
        mean = rows["mean"].to_numpy(dtype=float)
        se = np.nan_to_num(rows["se"].to_numpy(dtype=float))
        ax.plot(t, mean, color=style, marker="o", label=f"{norm} mean", gid=f"series-{norm}-mean")
        ax.plot(t, mean + 2 * se, color=style, linestyle=":", label=f"{norm} mean + 2 SE",
                gid=f"series-{norm}-upper")
        if report is not None:
            bound = np.array([report.bound_for(norm, int(v)) for v in t])
            keep = np.isfinite(bound)
            if keep.any():
                ax.plot(t[keep], bound[keep], color=style, linestyle="--", label=f"{norm} bound",
                        gid=f"series-{norm}-bound")
        plotted = True

    if plotted:
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.legend(loc="best", fontsize="small")
    ax.set_xlabel("samples t")
    ax.set_ylabel("squared error")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path


def write_sweep(summary: pd.DataFrame, out_dir: Union[str, Path]) -> Path:
    """Write sweep.csv (r,beta,theta,norm,slope,theory_exponent,all_pass)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    _write_csv(summary, path)
    return path
