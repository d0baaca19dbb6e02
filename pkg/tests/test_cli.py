"""Command-line interface tests: subcommand behavior, exit codes,
output files, and seeded reproducibility."""

from __future__ import annotations

import csv
import json
import shutil

import pytest

from donorplan import cli, fileio
from donorplan.bilp import parse_mps

GEN_SPEC = {
    "n_donors": 150,
    "n_sessions": 8,
    "as_of": "2020-01-01",
    "horizon_months": 4,
    "seed": 33,
}

CONFIG = {
    "window_months": 4,
    "provider": "none",
    "solver": "greedy",
    "radius_sweep": [10.0, 20.0],
    "time_limit_s": 5.0,
    "seed": 5,
}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated bundle shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "gen.json"
    spec_path.write_text(json.dumps(GEN_SPEC), encoding="utf-8")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(CONFIG), encoding="utf-8")
    data = root / "data"
    code = run("gen", "--config", spec_path, "--out", data)
    assert code == cli.EXIT_OK
    return root


def report_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scope", "metric", "value"]
    return {(scope, metric): value for scope, metric, value in rows[1:]}


class TestGen:
    def test_bundle_files_and_manifest(self, workspace):
        data = workspace / "data"
        for name in ("donors.csv", "donations.csv", "suspensions.csv",
                     "invitations.csv", "sessions.csv", "demand_panel.csv",
                     "first_time.csv", "postal_codes.csv", "manifest.json"):
            assert (data / name).exists(), name
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["command"] == "gen"
        assert manifest["config"]["n_donors"] == 150
        assert "donorplan_version" in manifest
        assert "config" in manifest["inputs"]
        assert set(manifest["outputs"]) >= {"donors.csv", "sessions.csv"}
        import hashlib
        digest = hashlib.sha256(
            (data / "donors.csv").read_bytes()
        ).hexdigest()
        assert manifest["outputs"]["donors.csv"] == digest

    def test_seeded_rerun_is_byte_identical(self, workspace, tmp_path):
        again = tmp_path / "data2"
        assert run(
            "gen", "--config", workspace / "gen.json", "--out", again
        ) == cli.EXIT_OK
        for name in ["donors.csv", "donations.csv", "sessions.csv",
                     "demand_panel.csv", "first_time.csv",
                     "postal_codes.csv", "manifest.json"]:
            assert (
                (workspace / "data" / name).read_bytes()
                == (again / name).read_bytes()
            ), name

    def test_seed_flag_changes_output(self, workspace, tmp_path):
        other = tmp_path / "data3"
        assert run(
            "gen", "--config", workspace / "gen.json",
            "--seed", 99, "--out", other,
        ) == cli.EXIT_OK
        assert (
            (workspace / "data" / "donors.csv").read_bytes()
            != (other / "donors.csv").read_bytes()
        )


class TestPlan:
    def test_two_window_plan(self, workspace, tmp_path):
        out = tmp_path / "plan"
        code = run(
            "plan", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--windows", 1, "--out", out,
        )
        assert code == cli.EXIT_OK
        rows = report_rows(out / "report.csv")
        assert rows[("window_0", "status")] == "planned"
        assert rows[("window_0", "start_month")] == "2020-01"
        assert int(rows[("window_0", "invitations")]) > 0
        assert 0.0 <= float(rows[("merged", "fulfillment_rate")]) <= 1.0
        assert rows[("merged", "violations")] == "0"
        assert rows[("merged", "invite_budget_breaches")] == "0"
        with open(out / "plan.csv", newline="", encoding="utf-8") as fh:
            plan_rows = list(csv.reader(fh))
        assert plan_rows[0] == fileio.PLAN_HEADER
        assert len(plan_rows) - 1 == int(rows[("window_0", "invitations")])

    def test_fixed_seed_outputs_are_stable(self, workspace, tmp_path):
        outs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            assert run(
                "plan", "--data", workspace / "data",
                "--config", workspace / "cfg.json",
                "--as-of", "2020-01-01", "--windows", 2, "--out", out,
            ) == cli.EXIT_OK
            outs.append(out)
        for name in ("plan.csv", "report.csv", "manifest.json"):
            assert (
                (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
            ), name

    def test_empty_first_time_series_still_plans(self, workspace, tmp_path):
        data = tmp_path / "data"
        shutil.copytree(workspace / "data", data)
        (data / "first_time.csv").write_text(
            ",".join(fileio.FIRST_TIME_HEADER) + "\n", encoding="utf-8"
        )
        out = tmp_path / "out"
        assert run(
            "plan", "--data", data, "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--windows", 1, "--out", out,
        ) == cli.EXIT_OK
        assert (out / "plan.csv").exists()


@pytest.fixture(scope="module")
def solved(workspace, tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = run(
        "solve", "--data", workspace / "data",
        "--config", workspace / "cfg.json",
        "--as-of", "2020-01-01", "--out", out,
    )
    assert code == cli.EXIT_OK
    return out


class TestSolveAndValidate:
    def test_solve_report_metrics(self, solved):
        rows = report_rows(solved / "report.csv")
        scope = "greedy"
        for metric in (
            "fulfillment_rate", "adverse_invited", "avg_distance_km",
            "avg_invites_per_non_hf", "runtime_s", "peak_memory_mb",
        ):
            assert (scope, metric) in rows, metric
        assert (solved / "plan.csv").exists()

    def test_validate_clean_plan(self, workspace, solved, tmp_path, capsys):
        out = tmp_path / "val"
        code = run(
            "validate", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01",
            "--plan", solved / "plan.csv", "--out", out,
        )
        assert code == cli.EXIT_OK
        assert "passes all checks" in capsys.readouterr().out
        rows = report_rows(out / "report.csv")
        assert rows[("validation", "result")] == "clean"

    def test_validate_tampered_plan(self, workspace, solved, tmp_path,
                                    capsys):
        with open(solved / "plan.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        rows.append(rows[1])  # same donor, same session, twice
        tampered = tmp_path / "tampered.csv"
        with open(tampered, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        out = tmp_path / "val"
        code = run(
            "validate", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--plan", tampered, "--out", out,
        )
        assert code == cli.EXIT_VIOLATIONS
        printed = capsys.readouterr().out
        assert "duplicate invitation" in printed
        listed = report_rows(out / "report.csv")
        assert any(scope == "structural" for scope, _ in listed)

    def test_validate_unknown_donor_errors(self, workspace, solved,
                                           tmp_path):
        text = (solved / "plan.csv").read_text()
        bad = tmp_path / "bad.csv"
        bad.write_text(text.replace("d0000", "dX000"), encoding="utf-8")
        code = run(
            "validate", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--plan", bad,
            "--out", tmp_path / "val",
        )
        assert code == cli.EXIT_ERROR


class TestCompare:
    def test_demand_scaled_comparison(self, workspace, tmp_path):
        out = tmp_path / "cmp"
        code = run(
            "compare", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--demand-scale", 2.0, "--out", out,
        )
        assert code == cli.EXIT_OK
        rows = report_rows(out / "report.csv")
        for scope in ("greedy", "exact"):
            assert rows[(scope, "status")] == "planned"
            for metric in (
                "fulfillment_rate", "adverse_invited", "avg_distance_km",
                "avg_invites_per_non_hf", "runtime_s", "peak_memory_mb",
            ):
                assert (scope, metric) in rows, (scope, metric)
        assert (out / "plan_greedy.csv").exists()
        assert (out / "plan_exact.csv").exists()

    def test_rejects_nonpositive_scale(self, workspace, tmp_path):
        code = run(
            "compare", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--demand-scale", 0,
            "--out", tmp_path / "cmp",
        )
        assert code == cli.EXIT_ERROR


class TestBacktestAndExport:
    def test_backtest_report(self, workspace, tmp_path):
        out = tmp_path / "bt"
        code = run(
            "backtest", "--data", workspace / "data", "--out", out,
        )
        assert code == cli.EXIT_OK
        rows = report_rows(out / "report.csv")
        for method in ("holt_winters", "seasonal_naive",
                       "same_month_mean", "ols_trend_seasonal"):
            assert (method, "pooled_mae") in rows
            assert (method, "relative_mae") in rows
            assert any(
                scope == method and metric.startswith("mae_")
                for scope, metric in rows
            )

    def test_export_model_round_trips(self, workspace, tmp_path):
        out = tmp_path / "mdl"
        code = run(
            "export-model", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--out", out,
        )
        assert code == cli.EXIT_OK
        parsed = parse_mps((out / "model.mps").read_text(encoding="utf-8"))
        assert len(parsed.column_order) > 0
        assert len(parsed.row_order) > 0
        assert all(name in parsed.integers for name in parsed.column_order
                   if name.startswith("x_"))


class TestExitCodes:
    def test_missing_required_input(self, workspace, tmp_path, capsys):
        data = tmp_path / "partial"
        data.mkdir()
        shutil.copy(workspace / "data" / "donors.csv", data / "donors.csv")
        code = run(
            "plan", "--data", data, "--config", workspace / "cfg.json",
            "--as-of", "2020-01-01", "--out", tmp_path / "out",
        )
        assert code == cli.EXIT_ERROR
        assert "missing required input file" in capsys.readouterr().err

    def test_malformed_config_json(self, workspace, tmp_path, capsys):
        broken = tmp_path / "broken.json"
        broken.write_text("{\"solver\": ", encoding="utf-8")
        code = run(
            "plan", "--data", workspace / "data", "--config", broken,
            "--as-of", "2020-01-01", "--out", tmp_path / "out",
        )
        assert code == cli.EXIT_ERROR
        assert "line" in capsys.readouterr().err

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        broken = tmp_path / "broken.json"
        broken.write_text("{\"sovler\": \"greedy\"}", encoding="utf-8")
        code = run(
            "plan", "--data", workspace / "data", "--config", broken,
            "--as-of", "2020-01-01", "--out", tmp_path / "out",
        )
        assert code == cli.EXIT_ERROR
        assert "sovler" in capsys.readouterr().err

    def test_bad_as_of_string(self, workspace, tmp_path, capsys):
        code = run(
            "plan", "--data", workspace / "data",
            "--config", workspace / "cfg.json",
            "--as-of", "01/02/2020", "--out", tmp_path / "out",
        )
        assert code == cli.EXIT_ERROR

    def test_infeasible_hard_window_exits_3(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        (data / "donors.csv").write_text(
            ",".join(fileio.DONORS_HEADER)
            + "\nd1,male,1985-06-15,65,O+,0.9,0,far,,\n",
            encoding="utf-8",
        )
        (data / "sessions.csv").write_text(
            ",".join(fileio.SESSIONS_HEADER)
            + "\ns1,site1,41.65,-0.88,2020-01-10,2020-01-10,"
            "2020-01-10,10.0\n",
            encoding="utf-8",
        )
        demand_lines = [",".join(fileio.DEMAND_HEADER)]
        for year in (2017, 2018, 2019):
            demand_lines.append(f"{year},1,O+,ce,10.0")
        (data / "demand_panel.csv").write_text(
            "\n".join(demand_lines) + "\n", encoding="utf-8"
        )
        # the only donor lives ~100 km from the session site
        (data / "postal_codes.csv").write_text(
            ",".join(fileio.POSTAL_HEADER) + "\nfar,42.55,-0.88\n",
            encoding="utf-8",
        )
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "window_months": 1,
            "demand_mode": "hard",
            "provider": "none",
            "solver": "greedy",
            "radius_sweep": [3.0],
        }), encoding="utf-8")
        code = run(
            "plan", "--data", data, "--config", cfg,
            "--as-of", "2020-01-01", "--out", tmp_path / "out",
        )
        assert code == cli.EXIT_INFEASIBLE

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2
