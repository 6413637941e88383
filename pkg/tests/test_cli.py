"""Test cases for the regimebound command line"""
import json

import numpy as np
import pytest

from regimebound import cli, monitoring
from regimebound.cli import build_parser, main
from regimebound.reports import BoundaryReport, DominanceReport, MomentsReport, PriceReport, WorstCaseReport, read_report


@pytest.fixture
def implicit_config(sample_config):
    # fully implicit steps keep the discrete surface monotone in time
    sample_config["grid"]["rannacher_steps"] = 10_000
    return sample_config


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    return _write


def run_cli(subcommand, config_path, out_dir, *extra):
    return main([subcommand, "--config", str(config_path), "--out", str(out_dir), "--log-level", "WARNING", *extra])


def snapshot(out_dir):
    return {path.name: path.read_bytes() for path in sorted(out_dir.iterdir())}


class TestParser:
    """Test argument parsing"""

    @pytest.mark.unit
    def test_subcommands_and_defaults(self):
        """Test the shared options on every subcommand"""
        parser = build_parser()
        for name in ("price", "worstcase", "boundary", "verify-extremal", "game", "moments"):
            args = parser.parse_args([name, "--config", "exp.json"])
            assert args.subcommand == name
            assert args.format == "json"
            assert args.seed is None
            assert not args.save_paths

    @pytest.mark.unit
    def test_config_required(self):
        """Test that --config is mandatory"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["price"])

    @pytest.mark.unit
    def test_unknown_format_refused(self):
        """Test the format choices"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["price", "--config", "exp.json", "--format", "xml"])


class TestConfigErrors:
    """Test exit code 2"""

    @pytest.mark.unit
    def test_missing_file(self, tmp_path, capsys):
        """Test a config path that does not exist"""
        assert run_cli("price", tmp_path / "absent.json", tmp_path / "out") == 2
        assert "[ERROR] config" in capsys.readouterr().out

    @pytest.mark.unit
    def test_invalid_field(self, sample_config, write_config, tmp_path, capsys):
        """Test that the failing field is named"""
        sample_config["grid"]["nx"] = 1
        assert run_cli("price", write_config(sample_config), tmp_path / "out") == 2
        assert "grid.nx" in capsys.readouterr().out

    @pytest.mark.unit
    def test_missing_boxes(self, sample_config, write_config, tmp_path, capsys):
        """Test a subcommand that needs a field the config lacks"""
        del sample_config["boxes"]
        assert run_cli("worstcase", write_config(sample_config), tmp_path / "out") == 2
        assert "boxes" in capsys.readouterr().out


class TestPrice:
    """Test the price subcommand"""

    @pytest.mark.integration
    def test_json_report(self, implicit_config, write_config, tmp_path, capsys):
        """Test a passing run and its report"""
        out = tmp_path / "out"
        assert run_cli("price", write_config(implicit_config), out) == 0
        printed = capsys.readouterr().out
        assert "[CHECK] invariants: PASS" in printed
        assert "[CHECK] regime_monotonicity: PASS" in printed
        assert "[SUCCESS] price" in printed
        report = read_report(out / "price.json")
        assert isinstance(report, PriceReport)
        assert set(report.prices) == {1, 2}
        assert report.prices[1] < report.prices[2]
        assert report.price == report.prices[1]
        assert report.boundary[1][0] is None

    @pytest.mark.integration
    def test_csv_artifacts(self, implicit_config, write_config, tmp_path):
        """Test the csv tables and the surface dump"""
        out = tmp_path / "out"
        assert run_cli("price", write_config(implicit_config), out, "--format", "csv") == 0
        for name in ("price.csv", "checks.csv", "surface.csv"):
            assert (out / name).exists()
        assert len((out / "surface.csv").read_text().splitlines()) == 1 + 61 * 2 * 41

    @pytest.mark.integration
    def test_invalid_matrix_is_config_error(self, implicit_config, write_config, tmp_path):
        """Test a non-conservative matrix"""
        implicit_config["matrix"] = [[-1.0, 2.0], [0.5, -0.5]]
        assert run_cli("price", write_config(implicit_config), tmp_path / "out") == 2

    @pytest.mark.slow
    def test_binomial_oracle(self, sample_config, write_config, tmp_path, capsys):
        """Test the single-regime PDE price against the binomial tree"""
        sample_config["model"] = {"type": "gbm", "sigma": [0.2], "mu": 0.05}
        del sample_config["boxes"], sample_config["matrix"]
        sample_config["grid"] = {"nx": 201, "nt": 201}
        sample_config["checks"]["enabled"] = {"invariants": False}
        out = tmp_path / "out"
        assert run_cli("price", write_config(sample_config), out) == 0
        assert "[CHECK] oracle: PASS" in capsys.readouterr().out
        report = read_report(out / "price.json")
        assert report.oracle_price == pytest.approx(report.price, rel=0.005)


class TestWorstCase:
    """Test the worstcase and boundary subcommands"""

    @pytest.mark.integration
    def test_hjb_matches_extremal(self, implicit_config, write_config, tmp_path, capsys):
        """Test the HJB cross-check passes for ordered volatilities"""
        out = tmp_path / "out"
        assert run_cli("worstcase", write_config(implicit_config), out) == 0
        assert "[CHECK] hjb: PASS" in capsys.readouterr().out
        report = read_report(out / "worstcase.json")
        assert isinstance(report, WorstCaseReport)
        assert report.monotonicity == "increasing"
        assert report.extremal_matrix == [[-0.5, 0.5], [1.0, -1.0]]
        assert report.rate_field_constant

    @pytest.mark.integration
    def test_boundary_curves(self, implicit_config, write_config, tmp_path, capsys):
        """Test one curve per regime with the low-volatility regime exercising higher"""
        del implicit_config["matrix"]
        out = tmp_path / "out"
        run_cli("boundary", write_config(implicit_config), out)
        assert "[CHECK] boundary_ordering" in capsys.readouterr().out
        report = read_report(out / "boundary.json")
        assert isinstance(report, BoundaryReport)
        assert report.matrix == [[-0.5, 0.5], [1.0, -1.0]]
        assert len(report.t) == 41
        assert report.boundaries[1][0] is None
        assert report.boundaries[1][-1] > report.boundaries[2][-1]


class TestVerifyExtremal:
    """Test the verify-extremal subcommand"""

    @pytest.mark.integration
    def test_dominance_and_brute_force(self, implicit_config, write_config, tmp_path, capsys):
        """Test that the extremal matrix is the minimiser"""
        out = tmp_path / "out"
        assert run_cli("verify-extremal", write_config(implicit_config), out) == 0
        printed = capsys.readouterr().out
        assert "[CHECK] dominance: PASS" in printed
        assert "[CHECK] brute_force: PASS" in printed
        report = read_report(out / "verify_extremal.json")
        assert isinstance(report, DominanceReport)
        assert report.brute_force_argmin == report.extremal_matrix
        assert len(report.margins) == 3 + 4
        assert len(report.brute_force_prices) == 4
        assert report.seed == 11


class TestGame:
    """Test the game subcommand plumbing"""

    @pytest.mark.integration
    def test_saved_paths(self, implicit_config, write_config, tmp_path):
        """Test the path summary and --save-paths with the Monte Carlo checks switched off"""
        implicit_config["checks"]["enabled"] = {"saddle": False, "lower_bound": False}
        out = tmp_path / "out"
        assert run_cli("game", write_config(implicit_config), out, "--save-paths", "--seed", "4") == 0
        report = read_report(out / "game.json")
        assert report.seed == 4
        assert report.saddle is None
        assert report.path_summary["n_paths"] == 1000
        with np.load(out / "paths.npz") as saved:
            assert saved["x"].shape == (1000, 51)
            assert set(np.unique(saved["y"])) <= {1, 2}


class TestMoments:
    """Test the moments subcommand"""

    @pytest.mark.integration
    def test_bound_holds(self, implicit_config, write_config, tmp_path):
        """Test both default exponents"""
        out = tmp_path / "out"
        assert run_cli("moments", write_config(implicit_config), out, "--format", "csv") == 0
        assert (out / "moments.csv").exists()
        assert run_cli("moments", write_config(implicit_config), out) == 0
        report = read_report(out / "moments.json")
        assert isinstance(report, MomentsReport)
        assert [r.q for r in report.rows] == [2.0, 4.0]
        assert all(r.k_growth == 0.4 for r in report.rows)
        assert all(r.passed for r in report.rows)

    @pytest.mark.integration
    def test_growth_constant_too_small(self, implicit_config, write_config, tmp_path, capsys):
        """Test that a growth constant below the coefficients is a run error"""
        implicit_config["checks"]["moment_k_growth"] = 0.1
        assert run_cli("moments", write_config(implicit_config), tmp_path / "out") == 1
        assert "[ERROR] MonteCarloError" in capsys.readouterr().out


class TestDeterminism:
    """Test that artifacts are byte-identical across runs and thread counts"""

    @pytest.mark.integration
    @pytest.mark.parametrize("out_format", ["json", "csv"])
    @pytest.mark.parametrize("subcommand", ["price", "worstcase"])
    def test_repeated_runs_are_byte_identical(self, implicit_config, write_config, tmp_path, subcommand, out_format):
        """Test two single-threaded runs and a two-thread run of the same config"""
        config = write_config(implicit_config)
        runs = {"first": (), "second": (), "threaded": ("--threads", "2")}
        for name, extra in runs.items():
            assert run_cli(subcommand, config, tmp_path / name, "--format", out_format, *extra) == 0
        reference = snapshot(tmp_path / "first")
        assert reference
        assert snapshot(tmp_path / "second") == reference
        assert snapshot(tmp_path / "threaded") == reference

    @pytest.mark.integration
    @pytest.mark.parametrize("subcommand", ["verify-extremal", "game"])
    def test_thread_count_does_not_change_reports(self, implicit_config, write_config, tmp_path, subcommand):
        """Test the sampling and Monte Carlo subcommands with one and three threads"""
        config = write_config(implicit_config)
        runs = (("one", "1"), ("three", "3"))
        codes = [run_cli(subcommand, config, tmp_path / name, "--threads", threads) for name, threads in runs]
        assert codes[0] == codes[1] != 2
        assert snapshot(tmp_path / "one") == snapshot(tmp_path / "three")


class TestUnexpectedErrors:
    """Test errors from outside the package hierarchy"""

    @pytest.mark.unit
    def test_unexpected_error_is_tracked(self, implicit_config, write_config, tmp_path, capsys, monkeypatch):
        """Test exit code 2, the error line and the run tracker entry"""

        def failing_write(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr(cli, "write_report", failing_write)
        assert run_cli("price", write_config(implicit_config), tmp_path / "out") == 2
        assert "[ERROR] OSError: disk full" in capsys.readouterr().out
        error = monitoring.run_tracker.errors[-1]
        assert error["error_type"] == "OSError"
        assert error["context"]["subcommand"] == "price"
