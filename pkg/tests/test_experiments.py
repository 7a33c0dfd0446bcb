import dataclasses
import os

import pytest

from gridstorm.charts import line_chart
from gridstorm.cli import main
from gridstorm.experiments import (
    ConfigError,
    ExperimentConfig,
    assign_capacities,
    build_experiment,
    format_trace,
    load_config,
    parse_attachments,
    run_point,
    run_sweep,
    scale_microgrid_load,
)
from gridstorm.model import compose
from gridstorm.cases import load_case
from gridstorm.planner import pma
from conftest import make_triangle


SMALL_SWEEP = dict(
    runs=2,
    capacity_sweep=(0.0, 0.6),
    resource_sweep=(0.0, 0.2),
    mgload_sweep=(13.5,),
)


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    @pytest.mark.parametrize(
        "field, value, message",
        [
            ("capacity_reduction", 1.0, "capacity_reduction"),
            ("resource_fraction", -0.1, "resource_fraction"),
            ("alpha", 0.0, "alpha"),
            ("alpha", 1.5, "alpha"),
            ("runs", 0, "runs"),
            ("beta", 0.0, "beta"),
            ("workers", 0, "workers"),
            ("microgrid_load", 0.0, "microgrid_load"),
            ("capacity_sweep", (0.5, 1.0), "sweep value"),
            ("resource_sweep", (-0.05,), "negative"),
            ("mgload_sweep", (0.0,), "not positive"),
            ("tariff_overrides", (("105", "r", 2.0),), "bus ids"),
        ],
    )
    def test_validation_errors(self, field, value, message):
        cfg = dataclasses.replace(ExperimentConfig(), **{field: value})
        with pytest.raises(ConfigError, match=message):
            cfg.validate()

    def test_microgrid_load_needs_attachments(self):
        cfg = dataclasses.replace(
            ExperimentConfig(), attachments=(), microgrid_load=10.0
        )
        with pytest.raises(ConfigError, match="attachment"):
            cfg.validate()


def test_parse_attachments():
    assert parse_attachments("5:ieee9, 9:ieee9,") == ((5, "ieee9"), (9, "ieee9"))
    with pytest.raises(ConfigError, match="HOST:CASE"):
        parse_attachments("5")


class TestLoadConfig:
    def test_headerless_file(self, tmp_path):
        p = tmp_path / "exp.ini"
        p.write_text("runs = 3\ncapacity_reduction = 0.5\nseed = 7\n")
        cfg = load_config(str(p))
        assert cfg.runs == 3
        assert cfg.capacity_reduction == 0.5
        assert cfg.seed == 7
        assert cfg.main_case == "ieee14"

    def test_sections_and_sweeps(self, tmp_path):
        p = tmp_path / "exp.ini"
        p.write_text(
            "[experiment]\n"
            "attachments = 5:ieee9\n"
            "capacity_sweep = 0.0, 0.3 0.6\n"
            "[tariff]\n"
            "rate = 2.0\n"
            "rho_ratio = 0.25\n"
            "r_105 = 3.0\n"
            "w_107 = 2.0\n"
            "[genattack]\n"
            "102 = 2.5\n"
        )
        cfg = load_config(str(p))
        assert cfg.attachments == ((5, "ieee9"),)
        assert cfg.capacity_sweep == (0.0, 0.3, 0.6)
        assert cfg.tariff_rate == 2.0
        assert cfg.tariff_rho_ratio == 0.25
        assert cfg.tariff_overrides == ((105, "r", 3.0), (107, "w", 2.0))
        assert cfg.gen_costs == ((102, 2.5),)

    def test_unknown_tariff_key(self, tmp_path):
        p = tmp_path / "exp.ini"
        p.write_text("[experiment]\nruns = 2\n[tariff]\nq_105 = 1.0\n")
        with pytest.raises(ConfigError, match="unknown tariff key"):
            load_config(str(p))


def test_assign_capacities_rates_then_derates():
    grid = make_triangle((2.0, None, None))  # base flows 1, 1, 0
    assign_capacities(grid, beta=3.0, reduction=0.5, floor=0.2)
    caps = {br.id: br.capacity for br in grid.branches}
    assert caps[1] == pytest.approx(1.0)    # explicit rating only derated
    assert caps[2] == pytest.approx(1.5)    # beta * |flow|, then derated
    assert caps[3] == pytest.approx(0.3)    # idle line held up by the floor


class TestScaleMicrogridLoad:
    def test_scales_members_only(self):
        exp = build_experiment(
            dataclasses.replace(ExperimentConfig(), microgrid_load=15.5)
        )
        merged = exp.composed.merged
        members = set()
        for mg in exp.composed.microgrids:
            members.update(mg.member_load_buses(merged))
        mg_total = sum(
            b.nominal_demand for b in merged.buses if b.id in members
        )
        assert mg_total == pytest.approx(15.5)
        base = build_experiment(ExperimentConfig()).composed.merged
        for b, b0 in zip(merged.buses, base.buses):
            if b.id not in members:
                assert b.nominal_demand == b0.nominal_demand

    def test_ratings_stay_anchored(self):
        scaled = build_experiment(
            dataclasses.replace(ExperimentConfig(), microgrid_load=15.5)
        ).composed.merged
        base = build_experiment(ExperimentConfig()).composed.merged
        for br, br0 in zip(scaled.branches, base.branches):
            assert br.capacity == br0.capacity

    def test_needs_some_attached_load(self):
        composed = compose(load_case("ieee14"), [])
        with pytest.raises(ConfigError, match="no load"):
            scale_microgrid_load(composed, 10.0)


def test_build_experiment_budget(default_experiment):
    # 14 unit-weight loads plus 11 unit-cost generators, times the fraction.
    assert default_experiment.budget == pytest.approx(5.0)
    assert set(default_experiment.gen_costs.values()) == {1.0}


def test_gen_cost_override_raises_budget():
    exp = build_experiment(
        dataclasses.replace(ExperimentConfig(), gen_costs=((102, 2.5),))
    )
    assert exp.gen_costs[102] == 2.5
    assert exp.budget == pytest.approx(5.3)


def test_run_point_rows():
    cfg = dataclasses.replace(ExperimentConfig(), runs=3)
    rows = run_point(cfg, "capacity", 0.6)
    assert len(rows) == 6
    assert [r["arm"] for r in rows] == ["pma"] * 3 + ["random"] * 3
    planned = [r for r in rows if r["arm"] == "pma"]
    assert len({r["node_failures"] for r in planned}) == 1  # replicated plan
    for r in rows:
        assert r["value"] == 0.6
        assert r["budget_spent"] <= r["budget_total"] + 1e-9


def test_format_trace_lines(default_experiment):
    exp = default_experiment
    res = pma(exp.composed, exp.budget, exp.tariff, exp.gen_costs)
    text = format_trace(res)
    lines = text.splitlines()
    assert len(lines) == len(res.trace) + 1
    assert lines[0].startswith("[000] baseline")
    assert "im-attack" in lines[1]
    assert lines[-1].startswith("total: lines=10 nodes=4")
    assert text.endswith("\n")


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = dataclasses.replace(ExperimentConfig(), **SMALL_SWEEP)
    written = run_sweep(cfg, str(out))
    return out, written


class TestRunSweep:
    def test_files_written(self, outputs):
        out, written = outputs
        names = {os.path.basename(p) for paths in written.values() for p in paths}
        for sweep in ("capacity", "resource", "mgload"):
            assert f"sweep_{sweep}.csv" in names
            assert f"summary_{sweep}.csv" in names
        assert "trace.log" in names
        assert "critical_nodes.csv" in names
        assert sum(n.endswith(".svg") for n in names) == 9
        for paths in written.values():
            for p in paths:
                assert os.path.exists(p)

    def test_sweep_csv_schema(self, outputs):
        out, _ = outputs
        lines = (out / "sweep_capacity.csv").read_text().splitlines()
        assert lines[0] == (
            "value,run,arm,lines_failed,node_failures,islanded_microgrids,"
            "microgrid_node_failures,budget_total,budget_spent"
        )
        # 2 points x 2 arms x 2 runs
        assert len(lines) == 1 + 8
        assert lines[1].startswith("0.000000,0,pma,")

    def test_summary_csv_schema(self, outputs):
        out, _ = outputs
        lines = (out / "summary_capacity.csv").read_text().splitlines()
        assert lines[0].startswith("value,arm,runs,lines_failed_mean,")
        assert len(lines) == 1 + 4  # 2 points x 2 arms

    def test_critical_nodes_report(self, outputs):
        out, _ = outputs
        lines = (out / "critical_nodes.csv").read_text().splitlines()
        assert lines[0] == "bus,role,contribution"
        assert any("islanding-critical" in line for line in lines[1:])

    def test_single_sweep_selection(self, tmp_path):
        cfg = dataclasses.replace(ExperimentConfig(), **SMALL_SWEEP)
        written = run_sweep(cfg, str(tmp_path), sweeps=("mgload",))
        names = {os.path.basename(p) for paths in written.values() for p in paths}
        assert "sweep_mgload.csv" in names
        assert "sweep_capacity.csv" not in names

    def test_unknown_sweep_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown sweep"):
            run_sweep(ExperimentConfig(), str(tmp_path), sweeps=("voltage",))

    def test_parallel_matches_serial(self, outputs, tmp_path):
        out, _ = outputs
        cfg = dataclasses.replace(ExperimentConfig(), **SMALL_SWEEP, workers=2)
        run_sweep(cfg, str(tmp_path), sweeps=("capacity",))
        assert (tmp_path / "sweep_capacity.csv").read_bytes() == (
            out / "sweep_capacity.csv"
        ).read_bytes()


class TestCharts:
    SERIES = [("pma", [(0.0, 1.0), (0.5, 3.0)]), ("random", [(0.0, 0.5), (0.5, 1.0)])]

    def test_deterministic(self):
        a = line_chart("t", "x", "y", self.SERIES)
        assert a == line_chart("t", "x", "y", self.SERIES)
        assert a.startswith("<svg ")
        assert a.count("<polyline") == 2

    def test_labels_present(self):
        svg = line_chart("node failures", "reduction", "mean", self.SERIES)
        for text in ("node failures", "reduction", "mean", "pma", "random"):
            assert text in svg


def test_cli_runs_a_sweep(tmp_path, capsys):
    ini = tmp_path / "exp.ini"
    ini.write_text("runs = 2\ncapacity_sweep = 0.0 0.6\n")
    out = tmp_path / "results"
    code = main(
        ["run", "--config", str(ini), "--sweep", "capacity", "--out", str(out)]
    )
    assert code == 0
    assert (out / "sweep_capacity.csv").exists()
    assert (out / "trace.log").exists()
    printed = capsys.readouterr().out.splitlines()
    assert str(out / "sweep_capacity.csv") in printed


def test_cli_flag_overrides(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("runs = 5\nmgload_sweep = 13.5\n")
    out = tmp_path / "results"
    code = main(
        ["run", "--config", str(ini), "--runs", "1", "--sweep", "mgload",
         "--out", str(out)]
    )
    assert code == 0
    lines = (out / "sweep_mgload.csv").read_text().splitlines()
    assert len(lines) == 1 + 2  # one point, one run per arm
