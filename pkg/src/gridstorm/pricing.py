"""Tariff model, price-driven demand response and minimum breaking cost.

A load's demand tracks its bill cap: demand(z) = (1 + k) * B / (r - z * rho)
where z in [0, 1] is the attacker's rate modification knob for that load.
With the default bill target B = nominal_demand * r and k = 0, z = 0
reproduces the nominal demand and z = 1 doubles it (rho = r / 2).

mcb answers: what is the cheapest z vector that pushes a target branch
past its capacity?  Demand gain per load is convex and increasing in z,
so the optimum puts every attacked load at a bound except at most one;
the solver enumerates those support patterns exactly and validates the
winner against a true re-solve.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import GridCase, LOAD
from .powerflow import (
    SensitivityMatrix,
    sensitivities,
    solve_balanced,
)

#: Relative margin above capacity that mcb aims for, so the cascade's
#: strict comparison reliably trips the target.
OVERLOAD_EPSILON = 1e-6


@dataclass(frozen=True)
class TariffEntry:
    rate: float                 # r, currency per power unit
    max_rate_change: float      # rho, attacker's reach; 0 <= rho < r
    sensitivity: float          # k, price sensitivity in [0, 1]
    bill_target: float          # B, currency the user aims to spend
    cost_weight: float = 1.0    # w, attacker currency per unit z


@dataclass
class Tariff:
    entries: dict[int, TariffEntry]

    @classmethod
    def default_for(
        cls,
        grid: GridCase,
        rate: float = 1.0,
        rho_ratio: float = 0.5,
        sensitivity: float = 0.0,
        cost_weight: float = 1.0,
        overrides: Mapping[int, Mapping[str, float]] | None = None,
    ) -> "Tariff":
        """Uniform tariff over the grid's load buses.

        ``overrides`` maps a bus id to per-field replacements with keys
        ``r``, ``rho``, ``k`` and optionally ``w``.  Bill targets are
        derived as nominal demand times the (possibly overridden) rate.
        """
        overrides = overrides or {}
        entries = {}
        for bus in grid.loads():
            ov = overrides.get(bus.id, {})
            r = float(ov.get("r", rate))
            rho = float(ov.get("rho", rho_ratio * r))
            k = float(ov.get("k", sensitivity))
            w = float(ov.get("w", cost_weight))
            entries[bus.id] = TariffEntry(
                rate=r,
                max_rate_change=rho,
                sensitivity=k,
                bill_target=bus.nominal_demand * r,
                cost_weight=w,
            )
        tariff = cls(entries)
        tariff.validate()
        return tariff

    def validate(self) -> None:
        for bus, e in self.entries.items():
            if e.rate <= 0:
                raise ValueError(f"load {bus}: rate must be positive")
            if not 0 <= e.max_rate_change < e.rate:
                raise ValueError(f"load {bus}: need 0 <= rho < r")
            if not 0 <= e.sensitivity <= 1:
                raise ValueError(f"load {bus}: sensitivity outside [0, 1]")
            if e.bill_target < 0:
                raise ValueError(f"load {bus}: negative bill target")
            if e.cost_weight <= 0:
                raise ValueError(f"load {bus}: cost weight must be positive")


@dataclass(frozen=True)
class AttackVector:
    """Per-load rate modification levels, each in [0, 1]."""

    z: Mapping[int, float]

    def __post_init__(self):
        for bus, v in self.z.items():
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError(f"z[{bus}] = {v} outside [0, 1]")

    def level(self, bus: int) -> float:
        return self.z.get(bus, 0.0)


def demand_response(bus: int, z: float, tariff: Tariff) -> float:
    """Demand of one load at rate modification z."""
    e = tariff.entries[bus]
    return (1.0 + e.sensitivity) * e.bill_target / (e.rate - z * e.max_rate_change)


def effective_demands(
    grid: GridCase, tariff: Tariff, z: Mapping[int, float] | None = None
) -> dict[int, float]:
    """Demand map for all load buses under an attack vector (z = 0 if absent)."""
    z = z or {}
    return {
        b.id: demand_response(b.id, z.get(b.id, 0.0), tariff)
        for b in grid.loads()
    }


def attack_cost(
    z: Mapping[int, float] | AttackVector,
    tariff: Tariff,
    base: Mapping[int, float] | None = None,
) -> float:
    """Attacker currency for an attack vector; with ``base``, the increment."""
    zmap = z.z if isinstance(z, AttackVector) else z
    base = base or {}
    return sum(
        tariff.entries[bus].cost_weight * (lvl - base.get(bus, 0.0))
        for bus, lvl in zmap.items()
    )


@dataclass
class McbResult:
    feasible: bool
    z: AttackVector
    cost: float
    achieved_flow: float


# -- exact separable cover ------------------------------------------------

@dataclass(frozen=True)
class _GainItem:
    bus: int
    weight: float       # cost per unit z
    z_lo: float         # starting level (already-spent attack state)
    gain_max: float     # gain at z = 1
    # demand curve parameters for inversion
    amp: float          # (1 + k) * B
    rate: float
    rho: float
    coef: float         # |M|, flow gain per unit demand

    def z_for_gain(self, gain: float) -> float:
        """Smallest z achieving the requested gain (assumes gain <= gain_max)."""
        if gain <= 0:
            return self.z_lo
        d_lo = self.amp / (self.rate - self.rho * self.z_lo)
        target_d = d_lo + gain / self.coef
        z = (self.rate - self.amp / target_d) / self.rho
        return min(1.0, max(self.z_lo, z))


def _min_cost_cover(items: Sequence[_GainItem], need: float):
    """Minimize sum of w * (z - z_lo) subject to total gain >= need.

    Gains are convex increasing in z, so some optimum has every item at a
    bound except at most one fractional item.  All (full subset, fractional
    item) patterns are enumerated; with the handful of loads that carry
    flow toward any one target this is cheap.  Beyond 16 items a greedy
    density ordering with the same fractional completion is used instead.
    """
    if need <= 0:
        return 0.0, {}
    items = sorted(items, key=lambda it: it.bus)
    n = len(items)
    if n == 0:
        return None
    if n > 16:
        return _greedy_cover(items, need)

    best_cost = math.inf
    best_z: dict[int, float] | None = None
    full_cost = [it.weight * (1.0 - it.z_lo) for it in items]
    for mask in range(1 << n):
        gain = 0.0
        cost = 0.0
        for i in range(n):
            if mask >> i & 1:
                gain += items[i].gain_max
                cost += full_cost[i]
        if cost >= best_cost:
            continue
        if gain >= need:
            if cost < best_cost:
                best_cost = cost
                best_z = {
                    items[i].bus: 1.0 for i in range(n) if mask >> i & 1
                }
            continue
        shortfall = need - gain
        for j in range(n):
            if mask >> j & 1:
                continue
            if items[j].gain_max < shortfall:
                continue
            zj = items[j].z_for_gain(shortfall)
            cj = cost + items[j].weight * (zj - items[j].z_lo)
            if cj < best_cost:
                best_cost = cj
                best_z = {
                    items[i].bus: 1.0 for i in range(n) if mask >> i & 1
                }
                best_z[items[j].bus] = zj
    if best_z is None:
        return None
    return best_cost, best_z


def _greedy_cover(items: Sequence[_GainItem], need: float):
    ranked = sorted(
        items,
        key=lambda it: (-(it.gain_max / (it.weight * (1.0 - it.z_lo) + 1e-30)), it.bus),
    )
    z: dict[int, float] = {}
    cost = 0.0
    gain = 0.0
    for it in ranked:
        if gain >= need:
            break
        shortfall = need - gain
        if it.gain_max >= shortfall:
            zi = it.z_for_gain(shortfall)
            z[it.bus] = zi
            cost += it.weight * (zi - it.z_lo)
            gain = need
        else:
            z[it.bus] = 1.0
            cost += it.weight * (1.0 - it.z_lo)
            gain += it.gain_max
    if gain < need:
        return None
    return cost, z


# -- minimum breaking cost ------------------------------------------------

def mcb(
    target_branch: int,
    grid: GridCase,
    tariff: Tariff,
    z_base: Mapping[int, float] | None = None,
    priority_gens: frozenset[int] = frozenset(),
    sens: SensitivityMatrix | None = None,
    epsilon: float = OVERLOAD_EPSILON,
) -> McbResult:
    """Cheapest incremental attack that overloads one target branch.

    Both flow directions are tried and the cheaper feasible one wins.
    The candidate is validated by a true re-solve; if island dispatch
    saturates along the way the model is re-linearized at the attacked
    operating point and solved again (at most once per generator).
    """
    z0 = dict(z_base) if z_base else {}
    for b in grid.load_buses():
        z0.setdefault(b, 0.0)
    branch = grid.branch_map()[target_branch]
    if not branch.alive:
        raise ValueError(f"target branch {target_branch} is not alive")
    if branch.capacity is None:
        return McbResult(False, AttackVector(dict(z0)), math.inf, 0.0)
    threshold = branch.capacity * (1.0 + epsilon)

    best: McbResult | None = None
    z_cur = dict(z0)
    rounds = max(2, len(grid.generators) + 1)
    for _ in range(rounds):
        demands = effective_demands(grid, tariff, z_cur)
        sol, _ = solve_balanced(grid, demands, priority_gens)
        f0 = sol.flows.get(target_branch, 0.0)
        m = sens if sens is not None else sensitivities(grid, demands, priority_gens)
        sens = None  # only trust the caller's matrix for the first round
        row = m.row(target_branch)

        candidate: tuple[float, dict[int, float]] | None = None
        for sign in (1.0, -1.0):
            need = threshold - sign * f0
            if need <= 0:
                candidate = (0.0, {})
                break
            items = []
            for i, bus in enumerate(m.load_buses):
                coef = sign * row[i]
                e = tariff.entries.get(bus)
                if coef <= 1e-12 or e is None or e.max_rate_change <= 0:
                    continue
                lo = z_cur[bus]
                if lo >= 1.0 - 1e-12:
                    continue
                d_lo = demand_response(bus, lo, tariff)
                d_hi = demand_response(bus, 1.0, tariff)
                items.append(
                    _GainItem(
                        bus=bus,
                        weight=e.cost_weight,
                        z_lo=lo,
                        gain_max=coef * (d_hi - d_lo),
                        amp=(1.0 + e.sensitivity) * e.bill_target,
                        rate=e.rate,
                        rho=e.max_rate_change,
                        coef=coef,
                    )
                )
            covered = _min_cost_cover(items, need)
            if covered is None:
                continue
            inc_cost, z_delta = covered
            if candidate is None or inc_cost < candidate[0]:
                candidate = (inc_cost, z_delta)
        if candidate is None:
            return McbResult(False, AttackVector(dict(z0)), math.inf, f0)

        z_new = dict(z_cur)
        z_new.update(candidate[1])
        true_demands = effective_demands(grid, tariff, z_new)
        true_sol, _ = solve_balanced(grid, true_demands, priority_gens)
        achieved = true_sol.flows.get(target_branch, 0.0)
        total_cost = attack_cost(z_new, tariff, base=z0)
        if abs(achieved) >= threshold - 1e-9:
            result = McbResult(True, AttackVector(z_new), total_cost, achieved)
            if best is None or result.cost < best.cost:
                best = result
            break
        # Dispatch saturated somewhere along the way: re-linearize at the
        # attacked operating point and extend from there.
        z_cur = z_new
    if best is None:
        return McbResult(False, AttackVector(dict(z_cur)), math.inf, 0.0)
    return best
