"""
Tests for result files.
"""

import math

import pandas as pd
import pytest


def _records():
    from src.metrics import ErrorRecord

    records = []
    for seed, scale in ((0, 1.0), (1, 3.0)):
        for t in (16, 32, 64):
            records.append(ErrorRecord(t=t, rho_sq=scale / t, k_sq=2 * scale / t, seed=seed, algorithm="last",
                                       iterate_k_sq=0.5 * scale))
    return records


def _report():
    from src.harness import BoundCheck, BoundReport

    checks = [BoundCheck(norm=norm, t=t, mean=0.0, se=0.0, bound=10.0 / t, passed=True)
              for norm in ("rho", "iterate") for t in (16, 32, 64)]
    return BoundReport(checks=checks, constants={"generalization": 5.29})


class TestErrorsTable:
    """Test the errors.csv layout."""

    def test_columns_and_bounds(self):
        from src.harness import aggregate
        from src.reporting import ERRORS_COLUMNS, errors_table

        table = errors_table(aggregate(_records()), _report())
        assert list(table.columns) == ERRORS_COLUMNS
        assert table["norm"].tolist() == ["rho"] * 3 + ["K"] * 3
        assert table["bound"].iloc[0] == pytest.approx(10.0 / 16)
        assert math.isnan(table["bound"].iloc[3])

    def test_without_report(self):
        from src.harness import aggregate
        from src.reporting import errors_table

        table = errors_table(aggregate(_records()), None)
        assert table["bound"].isna().all()


class TestWriteOutputs:
    """Test writing a run's files."""

    def test_files(self, tmp_path):
        from src.harness import RateFit
        from src.reporting import write_outputs

        fits = [RateFit(norm="rho", slope=-1.0, intercept=0.7, r_squared=1.0, n_points=3, theory_exponent=0.63)]
        paths = write_outputs(_report(), _records(), tmp_path / "run", fits)

        assert paths.errors_csv.exists()
        assert paths.fit_csv.exists()
        assert paths.plot_svg.exists()
        assert paths.iterates_csv is not None and paths.iterates_csv.exists()

        header = paths.errors_csv.read_text().splitlines()[0]
        assert header == "t,norm,mean,se,bound,seeds,algorithm"
        assert paths.fit_csv.read_text().splitlines()[0] == "norm,slope,intercept,r_squared,theory_exponent"
        assert paths.iterates_csv.read_text().splitlines()[0] == "t,mean,se,bound,seeds,algorithm"

    def test_round_trip(self, tmp_path):
        from src.harness import aggregate
        from src.reporting import read_errors_csv, write_outputs

        paths = write_outputs(None, _records(), tmp_path)
        frame = read_errors_csv(paths.errors_csv)
        expected = aggregate(_records())
        rho = frame[frame["norm"] == "rho"]
        assert rho["mean"].tolist() == pytest.approx(expected[expected["norm"] == "rho"]["mean"].tolist())
        assert frame["bound"].isna().all()

    def test_plot_series(self, tmp_path):
        from src.reporting import write_outputs

        paths = write_outputs(_report(), _records(), tmp_path)
        svg = paths.plot_svg.read_text()
        assert 'id="series-rho-mean"' in svg
        assert 'id="series-rho-upper"' in svg
        assert 'id="series-rho-bound"' in svg
        assert 'id="series-K-mean"' in svg
        assert 'id="series-K-bound"' not in svg

    def test_plot_deterministic(self, tmp_path):
        from src.reporting import write_outputs

        first = write_outputs(_report(), _records(), tmp_path / "a").plot_svg.read_text()
        second = write_outputs(_report(), _records(), tmp_path / "b").plot_svg.read_text()
        assert first == second

    def test_no_iterates(self, tmp_path):
        from src.metrics import ErrorRecord
        from src.reporting import write_outputs

        records = [ErrorRecord(t=t, rho_sq=1.0 / t, k_sq=None, seed=0, algorithm="last") for t in (8, 16)]
        paths = write_outputs(None, records, tmp_path)
        assert paths.iterates_csv is None
        assert not (tmp_path / "iterates.csv").exists()

    def test_bad_header(self, tmp_path):
        from src.reporting import read_errors_csv

        path = tmp_path / "errors.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_errors_csv(path)


class TestWriteSweep:
    """Test sweep.csv."""

    def test_sweep_csv(self, tmp_path):
        from src.harness import SWEEP_COLUMNS
        from src.reporting import write_sweep

        summary = pd.DataFrame([[1.0, 0.3, 0.63, "rho", -0.6, 0.63, True]], columns=SWEEP_COLUMNS)
        path = write_sweep(summary, tmp_path / "sweep")
        lines = path.read_text().splitlines()
        assert lines[0] == "r,beta,theta,norm,slope,theory_exponent,all_pass"
        assert lines[1] == "1,0.3,0.63,rho,-0.6,0.63,True"
