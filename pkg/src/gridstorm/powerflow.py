"""Linearized (DC) power flow on possibly-fragmented grids.

Flows follow angle differences over reactance.  Per island, supply and
demand are balanced first: generators share load in proportion to their
p_max rating, demand is scaled down when total rating is short, and
islands without any usable generator drop their load entirely (those
load buses count as failed).

Generators are grouped into dispatch tiers.  Priority units (price
attacked ones) are filled first, then regular units, then standby units;
within a tier the split is proportional to p_max.  A plain case with no
priority or standby units reduces to the single proportional rule.

All functions here are pure with respect to their grid argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import Branch, Bus, Generator, GridCase, LOAD, islands

#: Relative tolerance for the per-island injection balance pre-check.
_BALANCE_TOL = 1e-6


class PowerFlowError(RuntimeError):
    """Unsolvable or inconsistent power flow input."""


@dataclass(frozen=True)
class Injection:
    """Net power per bus (generation minus served demand)."""

    values: Mapping[int, float]

    def net(self, bus: int) -> float:
        return self.values.get(bus, 0.0)


@dataclass
class IslandBalance:
    buses: frozenset[int]
    dispatch: dict[int, float]
    served: dict[int, float]
    failed_loads: frozenset[int]
    pmin_relaxed: bool
    saturated: bool


@dataclass
class FlowSolution:
    flows: dict[int, float]
    angles: dict[int, float]
    injection: Injection


@dataclass
class SensitivityMatrix:
    """Branch flow response to one extra unit of demand at a load bus."""

    branch_ids: tuple[int, ...]
    load_buses: tuple[int, ...]
    matrix: np.ndarray

    def entry(self, branch_id: int, load_bus: int) -> float:
        return float(
            self.matrix[self.branch_ids.index(branch_id),
                        self.load_buses.index(load_bus)]
        )

    def row(self, branch_id: int) -> np.ndarray:
        return self.matrix[self.branch_ids.index(branch_id)]


def dispatch_tiers(
    generators: Iterable[Generator], priority_gens: frozenset[int] = frozenset()
) -> list[list[Generator]]:
    """Order usable generators into dispatch tiers (priority, regular, standby)."""
    priority, regular, standby = [], [], []
    for g in generators:
        if g.p_max <= 0:
            continue
        if g.bus in priority_gens:
            priority.append(g)
        elif g.standby:
            standby.append(g)
        else:
            regular.append(g)
    return [tier for tier in (priority, regular, standby) if tier]


def balance_island(
    buses: Iterable[Bus],
    generators: Iterable[Generator],
    demands: Mapping[int, float],
    priority_gens: frozenset[int] = frozenset(),
) -> IslandBalance:
    """Balance one island: proportional dispatch, demand scaling on shortfall."""
    bus_list = list(buses)
    bus_ids = frozenset(b.id for b in bus_list)
    gens = [g for g in generators if g.bus in bus_ids]
    demand = {b.id: demands.get(b.id, 0.0) for b in bus_list if b.kind == LOAD}
    total_demand = sum(demand.values())
    dispatch = {g.bus: 0.0 for g in gens}

    tiers = dispatch_tiers(gens, priority_gens)
    if not tiers:
        # Nothing can generate here: all load is shed and marked failed.
        return IslandBalance(
            buses=bus_ids,
            dispatch=dispatch,
            served={b: 0.0 for b in demand},
            failed_loads=frozenset(demand),
            pmin_relaxed=False,
            saturated=total_demand > 0,
        )

    remaining = total_demand
    for tier in tiers:
        cap = sum(g.p_max for g in tier)
        take = min(remaining, cap)
        for g in tier:
            dispatch[g.bus] = g.p_max * (take / cap)
        remaining -= take
        if remaining <= 0:
            break

    if remaining > 1e-12 * max(total_demand, 1.0):
        scale = (total_demand - remaining) / total_demand
        served = {b: d * scale for b, d in demand.items()}
        saturated = True
    else:
        served = dict(demand)
        saturated = False

    pmin_relaxed = any(
        dispatch[g.bus] < g.p_min - 1e-12 and dispatch[g.bus] > 0 for g in gens
    )
    return IslandBalance(
        buses=bus_ids,
        dispatch=dispatch,
        served=served,
        failed_loads=frozenset(),
        pmin_relaxed=pmin_relaxed,
        saturated=saturated,
    )


def balance(
    grid: GridCase,
    demands: Mapping[int, float] | None = None,
    priority_gens: frozenset[int] = frozenset(),
) -> tuple[list[IslandBalance], Injection]:
    """Balance every island of the grid and assemble the net injection."""
    if demands is None:
        demands = grid.nominal_demands()
    bus_map = grid.bus_map()
    balances = []
    net: dict[int, float] = {}
    for comp in islands(grid):
        bal = balance_island(
            (bus_map[b] for b in comp), grid.generators, demands, priority_gens
        )
        balances.append(bal)
        for b, p in bal.dispatch.items():
            net[b] = net.get(b, 0.0) + p
        for b, d in bal.served.items():
            net[b] = net.get(b, 0.0) - d
    return balances, Injection(net)


def _island_system(grid: GridCase, comp: frozenset[int]):
    """Index map, susceptance matrix and alive branches for one island."""
    ids = sorted(comp)
    index = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    b_mat = np.zeros((n, n))
    brs = []
    for br in grid.branches:
        if br.alive and br.from_bus in comp:
            w = 1.0 / br.reactance
            i, j = index[br.from_bus], index[br.to_bus]
            b_mat[i, i] += w
            b_mat[j, j] += w
            b_mat[i, j] -= w
            b_mat[j, i] -= w
            brs.append(br)
    return ids, index, b_mat, brs


def solve_dc(grid: GridCase, injection: Injection) -> FlowSolution:
    """Solve angles and branch flows for a balanced injection.

    The lowest bus id of each island is the angle reference (angle 0).
    Raises PowerFlowError when an island's injection does not sum to zero
    or its reduced system is singular.
    """
    angles: dict[int, float] = {}
    flows: dict[int, float] = {}
    for comp in islands(grid):
        ids, index, b_mat, brs = _island_system(grid, comp)
        p = np.array([injection.net(b) for b in ids])
        scale = max(1.0, float(np.abs(p).sum()))
        if abs(p.sum()) > _BALANCE_TOL * scale:
            raise PowerFlowError(
                f"island {ids}: injection sums to {p.sum():.3e}, not balanced"
            )
        theta = np.zeros(len(ids))
        if len(ids) > 1:
            try:
                theta[1:] = np.linalg.solve(b_mat[1:, 1:], p[1:])
            except np.linalg.LinAlgError as exc:
                raise PowerFlowError(f"island {ids}: singular system ({exc})") from None
        for b, t in zip(ids, theta):
            angles[b] = float(t)
        for br in brs:
            flows[br.id] = float(
                (theta[index[br.from_bus]] - theta[index[br.to_bus]]) / br.reactance
            )
    return FlowSolution(flows=flows, angles=angles, injection=injection)


def solve_balanced(
    grid: GridCase,
    demands: Mapping[int, float] | None = None,
    priority_gens: frozenset[int] = frozenset(),
) -> tuple[FlowSolution, list[IslandBalance]]:
    """Balance the grid, then solve it.  The everyday entry point."""
    balances, inj = balance(grid, demands, priority_gens)
    return solve_dc(grid, inj), balances


@dataclass
class FlowOperator:
    """Linear map from bus injections to branch flows (per topology).

    Column ``j`` holds the branch flows caused by one unit injected at
    bus ``j`` and absorbed at its island's reference bus.  Balanced
    injection vectors (summing to zero per island) therefore map to their
    exact flow response regardless of the reference choice.
    """

    branch_ids: tuple[int, ...]
    bus_ids: tuple[int, ...]
    matrix: np.ndarray  # shape (n_branches, n_buses)

    def bus_index(self, bus: int) -> int:
        return self.bus_ids.index(bus)


def flow_operator(grid: GridCase) -> FlowOperator:
    all_bus_ids = sorted(b.id for b in grid.buses)
    col = {b: i for i, b in enumerate(all_bus_ids)}
    branch_ids: list[int] = []
    blocks: list[tuple[list[Branch], dict[int, int], np.ndarray, list[int]]] = []
    for comp in islands(grid):
        ids, index, b_mat, brs = _island_system(grid, comp)
        branch_ids.extend(br.id for br in brs)
        n = len(ids)
        theta = np.zeros((n, n))
        if n > 1:
            rhs = np.eye(n)[1:, 1:]
            try:
                theta[1:, 1:] = np.linalg.solve(b_mat[1:, 1:], rhs)
            except np.linalg.LinAlgError as exc:
                raise PowerFlowError(f"island {ids}: singular system ({exc})") from None
        blocks.append((brs, index, theta, ids))
    matrix = np.zeros((len(branch_ids), len(all_bus_ids)))
    row = 0
    for brs, index, theta, ids in blocks:
        for br in brs:
            drow = (theta[index[br.from_bus]] - theta[index[br.to_bus]]) / br.reactance
            for b in ids:
                matrix[row, col[b]] = drow[index[b]]
            row += 1
    return FlowOperator(tuple(branch_ids), tuple(all_bus_ids), matrix)


def sensitivities(
    grid: GridCase,
    demands: Mapping[int, float] | None = None,
    priority_gens: frozenset[int] = frozenset(),
) -> SensitivityMatrix:
    """Flow response per branch to one extra unit of demand at each load bus.

    In an island with spare generating capacity the extra demand is
    covered by the marginal dispatch tier in proportion to p_max.  In a
    saturated island total output is pinned, so extra requested demand
    only re-weights how the pinned supply is shared among loads.  Loads
    in islands with no usable generation get an all-zero column.
    """
    if demands is None:
        demands = grid.nominal_demands()
    op = flow_operator(grid)
    n_br = len(op.branch_ids)
    load_buses = tuple(sorted(grid.load_buses()))
    matrix = np.zeros((n_br, len(load_buses)))
    col_of = {b: i for i, b in enumerate(load_buses)}
    bus_map = grid.bus_map()

    for comp in islands(grid):
        island_loads = [b for b in load_buses if b in comp]
        if not island_loads:
            continue
        bal = balance_island(
            (bus_map[b] for b in comp), grid.generators, demands, priority_gens
        )
        tiers = dispatch_tiers(
            (g for g in grid.generators if g.bus in comp), priority_gens
        )
        if not tiers:
            continue  # dead island: columns stay zero
        if not bal.saturated:
            # Find the marginal tier: the first with spare capacity.
            marginal = None
            for tier in tiers:
                cap = sum(g.p_max for g in tier)
                out = sum(bal.dispatch[g.bus] for g in tier)
                if out < cap - 1e-12:
                    marginal = tier
                    break
            if marginal is None:
                marginal = tiers[-1]
            cap = sum(g.p_max for g in marginal)
            response = np.zeros(len(op.bus_ids))
            for g in marginal:
                response[op.bus_index(g.bus)] = g.p_max / cap
            gen_flows = op.matrix @ response
            for b in island_loads:
                matrix[:, col_of[b]] = gen_flows - op.matrix[:, op.bus_index(b)]
        else:
            # Pinned supply: served_j = P * D_j / sum(D).
            pinned = sum(bal.dispatch.values())
            d = np.array([demands.get(b, 0.0) for b in island_loads])
            total = d.sum()
            if total <= 0:
                continue
            load_cols = np.stack(
                [op.matrix[:, op.bus_index(b)] for b in island_loads], axis=1
            )
            for i, b in enumerate(island_loads):
                dserved = -pinned * d / total**2
                dserved[i] += pinned / total
                matrix[:, col_of[b]] = -(load_cols @ dserved)
    return SensitivityMatrix(op.branch_ids, load_buses, matrix)


# -- residual checks ------------------------------------------------------

def kirchhoff_residual(grid: GridCase, sol: FlowSolution) -> float:
    """Largest per-bus imbalance between injection and branch flows."""
    net = {b.id: sol.injection.net(b.id) for b in grid.buses}
    for br in grid.branches:
        if br.alive and br.id in sol.flows:
            f = sol.flows[br.id]
            net[br.from_bus] -= f
            net[br.to_bus] += f
    return max((abs(v) for v in net.values()), default=0.0)


def angle_residual(grid: GridCase, sol: FlowSolution) -> float:
    """Largest mismatch between angle differences and reactance * flow."""
    worst = 0.0
    for br in grid.branches:
        if br.alive and br.id in sol.flows:
            lhs = sol.angles[br.from_bus] - sol.angles[br.to_bus]
            worst = max(worst, abs(lhs - br.reactance * sol.flows[br.id]))
    return worst
