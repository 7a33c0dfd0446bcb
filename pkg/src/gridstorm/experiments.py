"""Experiment assembly and parameter sweeps.

An experiment composes a transmission case with microgrid attachments,
derives line ratings from the settled base case, applies a uniform
rating reduction, then runs the planned attack and a seeded random
baseline over one of three swept parameters: rating reduction,
attacker resource fraction, or total microgrid load.

All outputs (CSV, trace, SVG) use fixed float formats and sorted
iteration so repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .cases import load_case
from .charts import write_chart
from .model import ComposedGrid, GridCase, compose
from .planner import PlanResult, critical_nodes, pma, random_baseline
from .powerflow import solve_balanced
from .pricing import Tariff

DEFAULT_CAPACITY_SWEEP = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.78)
DEFAULT_RESOURCE_SWEEP = tuple(round(0.05 * i, 2) for i in range(14))
DEFAULT_MGLOAD_SWEEP = (13.5, 15.5, 17.5, 19.5, 21.5)

DEFAULT_BETA = 15.0
CAPACITY_FLOOR = 6.0

_METRICS = ("node_failures", "islanded_microgrids", "microgrid_node_failures")
_COLUMNS = (
    "value",
    "run",
    "arm",
    "lines_failed",
    "node_failures",
    "islanded_microgrids",
    "microgrid_node_failures",
    "budget_total",
    "budget_spent",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    main_case: str = "ieee14"
    attachments: tuple[tuple[int, str], ...] = ((5, "ieee9"), (9, "ieee9"))
    capacity_reduction: float = 0.6
    resource_fraction: float = 0.2
    microgrid_load: float | None = None
    alpha: float = 1.0
    runs: int = 50
    seed: int = 42
    beta: float = DEFAULT_BETA
    workers: int = 1
    tariff_rate: float = 1.0
    tariff_rho_ratio: float = 0.5
    tariff_overrides: tuple[tuple[int, str, float], ...] = ()
    gen_costs: tuple[tuple[int, float], ...] = ()
    capacity_sweep: tuple[float, ...] = DEFAULT_CAPACITY_SWEEP
    resource_sweep: tuple[float, ...] = DEFAULT_RESOURCE_SWEEP
    mgload_sweep: tuple[float, ...] = DEFAULT_MGLOAD_SWEEP

    def validate(self) -> None:
        if not 0.0 <= self.capacity_reduction < 1.0:
            raise ConfigError("capacity_reduction must be in [0, 1)")
        if self.resource_fraction < 0:
            raise ConfigError("resource_fraction must be non-negative")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must be in (0, 1]")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.microgrid_load is not None:
            if self.microgrid_load <= 0:
                raise ConfigError("microgrid_load must be positive")
            if not self.attachments:
                raise ConfigError("microgrid_load needs at least one attachment")
        for v in self.capacity_sweep:
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"capacity sweep value {v} out of [0, 1)")
        for v in self.resource_sweep:
            if v < 0:
                raise ConfigError(f"resource sweep value {v} negative")
        for v in self.mgload_sweep:
            if v <= 0:
                raise ConfigError(f"microgrid load sweep value {v} not positive")
        for key, _, _ in self.tariff_overrides:
            if not isinstance(key, int):
                raise ConfigError("tariff override keys must be bus ids")


def parse_attachments(text: str) -> tuple[tuple[int, str], ...]:
    """Parse "5:ieee9,9:ieee9" into attachment pairs."""
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        host, _, case = chunk.partition(":")
        if not case:
            raise ConfigError(f"attachment {chunk!r} is not HOST:CASE")
        out.append((int(host), case.strip()))
    return tuple(out)


def load_config(path: str) -> ExperimentConfig:
    """Read an INI config.  A bare file without section headers is
    treated as the [experiment] section."""
    import configparser

    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    cp = configparser.ConfigParser()
    cp.read_string(text)
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    kwargs: dict = {}

    def grab(key, conv):
        if key in exp:
            kwargs[key] = conv(exp[key])

    grab("main_case", str)
    grab("capacity_reduction", float)
    grab("resource_fraction", float)
    grab("microgrid_load", float)
    grab("alpha", float)
    grab("runs", int)
    grab("seed", int)
    grab("beta", float)
    grab("workers", int)
    if "attachments" in exp:
        kwargs["attachments"] = parse_attachments(exp["attachments"])
    for sweep in ("capacity_sweep", "resource_sweep", "mgload_sweep"):
        if sweep in exp:
            kwargs[sweep] = tuple(
                float(v) for v in exp[sweep].replace(",", " ").split()
            )
    if cp.has_section("tariff"):
        overrides = []
        sec = cp["tariff"]
        for key in sorted(sec):
            if key == "rate":
                kwargs["tariff_rate"] = float(sec[key])
            elif key == "rho_ratio":
                kwargs["tariff_rho_ratio"] = float(sec[key])
            else:
                name, _, bus = key.partition("_")
                if name not in ("r", "rho", "k", "w") or not bus.isdigit():
                    raise ConfigError(f"unknown tariff key {key!r}")
                overrides.append((int(bus), name, float(sec[key])))
        kwargs["tariff_overrides"] = tuple(overrides)
    if cp.has_section("genattack"):
        kwargs["gen_costs"] = tuple(
            (int(bus), float(cost)) for bus, cost in sorted(cp["genattack"].items())
        )
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


# -- grid preparation -----------------------------------------------------

def assign_capacities(
    grid: GridCase,
    beta: float = DEFAULT_BETA,
    reduction: float = 0.0,
    floor: float = CAPACITY_FLOOR,
) -> None:
    """Give every branch a firm rating, then derate uniformly.

    Branches without an explicit rating get beta times their settled
    base-case flow magnitude.  The floor keeps lightly loaded lines from
    being rated so low that modest demand shifts could trip them.
    """
    sol, _ = solve_balanced(grid)
    for br in grid.branches:
        if br.capacity is None:
            base = abs(sol.flows.get(br.id, 0.0))
            br.capacity = beta * max(base, floor)
        br.capacity *= 1.0 - reduction


def scale_microgrid_load(composed: ComposedGrid, total_load: float) -> None:
    """Scale attached-microgrid demand to the requested total.

    Ratings and tie sizing are anchored to the as-composed demand, so
    call this after assign_capacities to model demand growth on an
    unchanged network.
    """
    member_loads: set[int] = set()
    for mg in composed.microgrids:
        member_loads.update(mg.member_load_buses(composed.merged))
    current = sum(
        b.nominal_demand for b in composed.merged.buses if b.id in member_loads
    )
    if current <= 0:
        raise ConfigError("attached microgrids have no load to scale")
    factor = total_load / current
    composed.merged.buses = [
        dataclasses.replace(b, nominal_demand=b.nominal_demand * factor)
        if b.id in member_loads
        else b
        for b in composed.merged.buses
    ]


@dataclass
class Experiment:
    config: ExperimentConfig
    composed: ComposedGrid
    tariff: Tariff
    gen_costs: dict[int, float]
    budget: float


def build_experiment(config: ExperimentConfig) -> Experiment:
    config.validate()
    main = load_case(config.main_case)
    attachments = [(host, load_case(case)) for host, case in config.attachments]
    composed = compose(main, attachments)
    assign_capacities(
        composed.merged, beta=config.beta, reduction=config.capacity_reduction
    )
    if config.microgrid_load is not None:
        scale_microgrid_load(composed, config.microgrid_load)
    overrides: dict[int, dict[str, float]] = {}
    for bus, key, value in config.tariff_overrides:
        overrides.setdefault(bus, {})[key] = value
    tariff = Tariff.default_for(
        composed.merged,
        rate=config.tariff_rate,
        rho_ratio=config.tariff_rho_ratio,
        overrides=overrides,
    )
    gen_costs = {g.bus: 1.0 for g in composed.merged.generators}
    gen_costs.update(dict(config.gen_costs))
    total_weight = sum(e.cost_weight for e in tariff.entries.values())
    budget = config.resource_fraction * (total_weight + sum(gen_costs.values()))
    return Experiment(config, composed, tariff, gen_costs, budget)


# -- sweep execution ------------------------------------------------------

def _result_row(value: float, run: int, arm: str, exp: Experiment, res: PlanResult) -> dict:
    return {
        "value": value,
        "run": run,
        "arm": arm,
        "lines_failed": len(res.s1),
        "node_failures": res.total_node_failures,
        "islanded_microgrids": len(res.s2),
        "microgrid_node_failures": len(res.s3),
        "budget_total": exp.budget,
        "budget_spent": res.ledger.spent,
    }


def _point_config(config: ExperimentConfig, sweep: str, value: float) -> ExperimentConfig:
    if sweep == "capacity":
        return dataclasses.replace(config, capacity_reduction=value)
    if sweep == "resource":
        return dataclasses.replace(config, resource_fraction=value)
    if sweep == "mgload":
        return dataclasses.replace(config, microgrid_load=value)
    raise ConfigError(f"unknown sweep {sweep!r}")


def run_point(config: ExperimentConfig, sweep: str, value: float) -> list[dict]:
    """All result rows for one sweep point: one planned attack
    (replicated across runs; it is deterministic) plus seeded randoms."""
    exp = build_experiment(_point_config(config, sweep, value))
    planned = pma(
        exp.composed, exp.budget, exp.tariff, exp.gen_costs, exp.config.alpha
    )
    rows = []
    for run in range(config.runs):
        rows.append(_result_row(value, run, "pma", exp, planned))
    for run in range(config.runs):
        res = random_baseline(
            exp.composed,
            exp.budget,
            exp.tariff,
            config.seed + run,
            exp.gen_costs,
            exp.config.alpha,
        )
        rows.append(_result_row(value, run, "random", exp, res))
    return rows


def _point_job(args: tuple[ExperimentConfig, str, float]) -> list[dict]:
    return run_point(*args)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_csv(path: str, columns: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _summarize(rows: list[dict]) -> list[dict]:
    keys = sorted({(r["value"], r["arm"]) for r in rows})
    out = []
    for value, arm in keys:
        group = [r for r in rows if r["value"] == value and r["arm"] == arm]
        rec = {"value": value, "arm": arm, "runs": len(group)}
        for metric in ("lines_failed",) + _METRICS + ("budget_spent",):
            rec[f"{metric}_mean"] = sum(r[metric] for r in group) / len(group)
        out.append(rec)
    return out


_SWEEP_LABELS = {
    "capacity": "line rating reduction",
    "resource": "attacker resource fraction",
    "mgload": "total microgrid load",
}


def run_sweep(
    config: ExperimentConfig,
    out_dir: str,
    sweeps: tuple[str, ...] | None = None,
) -> dict[str, list[str]]:
    """Run parameter sweeps (all three by default) and write CSVs,
    charts, the attack trace and the critical-node report into out_dir."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    grids = {
        "capacity": config.capacity_sweep,
        "resource": config.resource_sweep,
        "mgload": config.mgload_sweep,
    }
    selected = tuple(sweeps) if sweeps is not None else tuple(grids)
    for name in selected:
        if name not in grids:
            raise ConfigError(f"unknown sweep {name!r}")
    jobs = [
        (config, sweep, value) for sweep in selected for value in grids[sweep]
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_point_job, jobs))
    else:
        results = [_point_job(job) for job in jobs]

    by_sweep: dict[str, list[dict]] = {name: [] for name in selected}
    for (_cfg, sweep, _value), rows in zip(jobs, results):
        by_sweep[sweep].extend(rows)

    written: dict[str, list[str]] = {"csv": [], "charts": [], "reports": []}
    for sweep in selected:
        rows = by_sweep[sweep]
        path = os.path.join(out_dir, f"sweep_{sweep}.csv")
        _write_csv(path, _COLUMNS, rows)
        written["csv"].append(path)
        summary = _summarize(rows)
        spath = os.path.join(out_dir, f"summary_{sweep}.csv")
        scols = ("value", "arm", "runs") + tuple(
            f"{m}_mean" for m in ("lines_failed",) + _METRICS + ("budget_spent",)
        )
        _write_csv(spath, scols, summary)
        written["csv"].append(spath)
        for metric in _METRICS:
            series = []
            for arm in ("pma", "random"):
                pts = [
                    (rec["value"], rec[f"{metric}_mean"])
                    for rec in summary
                    if rec["arm"] == arm
                ]
                series.append((arm, pts))
            cpath = os.path.join(out_dir, f"chart_{sweep}_{metric}.svg")
            write_chart(
                cpath,
                f"{metric} vs {_SWEEP_LABELS[sweep]}",
                _SWEEP_LABELS[sweep],
                metric.replace("_", " "),
                series,
            )
            written["charts"].append(cpath)

    exp = build_experiment(config)
    planned = pma(exp.composed, exp.budget, exp.tariff, exp.gen_costs, config.alpha)
    tpath = os.path.join(out_dir, "trace.log")
    with open(tpath, "w") as fh:
        fh.write(format_trace(planned))
    written["reports"].append(tpath)

    ranked = critical_nodes(
        exp.composed, exp.budget, exp.tariff, exp.gen_costs, config.alpha
    )
    npath = os.path.join(out_dir, "critical_nodes.csv")
    with open(npath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bus", "role", "contribution"])
        for node in ranked:
            writer.writerow([node.bus, node.role, f"{node.contribution:.6f}"])
    written["reports"].append(npath)
    return written


def format_trace(result: PlanResult) -> str:
    lines = []
    for i, e in enumerate(result.trace):
        z = ",".join(f"{bus}:+{d:.4f}->{lvl:.4f}" for bus, d, lvl in e.z_delta)
        lines.append(
            f"[{i:03d}] {e.kind:<13} target={e.target if e.target is not None else '-'} "
            f"cost={e.cost:.6f} z=[{z}] lines={list(e.lines_failed)} "
            f"nodes={list(e.nodes_failed)} islanded={list(e.islanded)}"
        )
    lines.append(
        f"total: lines={len(result.s1)} nodes={result.total_node_failures} "
        f"islanded={sorted(result.s2)} microgrid_nodes={sorted(result.s3)} "
        f"spent={result.ledger.spent:.6f}/{result.ledger.total:.6f}"
    )
    return "\n".join(lines) + "\n"
