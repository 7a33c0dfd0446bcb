import numpy as np
import pytest

from gridstorm.model import Branch, Bus, Generator, GridCase
from gridstorm.powerflow import (
    Injection,
    PowerFlowError,
    angle_residual,
    balance,
    balance_island,
    dispatch_tiers,
    flow_operator,
    kirchhoff_residual,
    sensitivities,
    solve_balanced,
    solve_dc,
)


def test_two_bus_flow(two_bus):
    sol, balances = solve_balanced(two_bus)
    assert sol.flows[1] == pytest.approx(1.0)
    assert sol.angles[1] == 0.0
    assert sol.angles[2] == pytest.approx(-0.1)
    assert balances[0].dispatch[1] == pytest.approx(1.0)
    assert not balances[0].saturated


def test_triangle_flow_split(triangle):
    """Symmetric ring: both feeder lines carry one unit, the rung is idle."""
    sol, _ = solve_balanced(triangle)
    assert sol.flows[1] == pytest.approx(1.0)
    assert sol.flows[2] == pytest.approx(1.0)
    assert sol.flows[3] == pytest.approx(0.0, abs=1e-12)
    assert kirchhoff_residual(triangle, sol) < 1e-12
    assert angle_residual(triangle, sol) < 1e-12


def test_unbalanced_injection_rejected(two_bus):
    with pytest.raises(PowerFlowError, match="not balanced"):
        solve_dc(two_bus, Injection({1: 1.0, 2: -0.25}))


def test_each_island_gets_its_own_reference():
    grid = GridCase(
        "pair",
        [Bus(1, "generator"), Bus(2, "load", 1.0), Bus(4, "generator"), Bus(5, "load", 2.0)],
        [Generator(1, 0, 3), Generator(4, 0, 3)],
        [Branch(1, 1, 2, 0.1), Branch(2, 4, 5, 0.2)],
    )
    sol, _ = solve_balanced(grid)
    assert sol.angles[1] == 0.0
    assert sol.angles[4] == 0.0
    assert sol.flows[2] == pytest.approx(2.0)


class TestDispatch:
    def test_tier_order_and_filtering(self):
        gens = [
            Generator(1, 0, 5.0),
            Generator(2, 0, 2.0, standby=True),
            Generator(3, 0, 1.0),
            Generator(4, 0, 0.0),
        ]
        tiers = dispatch_tiers(gens, priority_gens=frozenset({3}))
        assert [[g.bus for g in tier] for tier in tiers] == [[3], [1], [2]]

    def test_proportional_split_within_tier(self):
        buses = [Bus(1, "generator"), Bus(2, "generator"), Bus(3, "load", 3.0)]
        gens = [Generator(1, 0, 2.0), Generator(2, 0, 4.0)]
        bal = balance_island(buses, gens, {3: 3.0})
        assert bal.dispatch[1] == pytest.approx(1.0)
        assert bal.dispatch[2] == pytest.approx(2.0)
        assert bal.served[3] == pytest.approx(3.0)

    def test_priority_tier_fills_first(self):
        buses = [Bus(1, "generator"), Bus(2, "generator"), Bus(3, "load", 1.0)]
        gens = [Generator(1, 0, 2.0), Generator(2, 0, 2.0)]
        bal = balance_island(buses, gens, {3: 1.0}, priority_gens=frozenset({2}))
        assert bal.dispatch[2] == pytest.approx(1.0)
        assert bal.dispatch[1] == pytest.approx(0.0)

    def test_standby_used_only_after_regular(self):
        buses = [Bus(1, "generator"), Bus(2, "generator"), Bus(3, "load", 3.0)]
        gens = [Generator(1, 0, 2.0), Generator(2, 0, 2.0, standby=True)]
        bal = balance_island(buses, gens, {3: 3.0})
        assert bal.dispatch[1] == pytest.approx(2.0)
        assert bal.dispatch[2] == pytest.approx(1.0)

    def test_shortfall_scales_all_loads(self):
        buses = [Bus(1, "generator"), Bus(2, "load", 1.5), Bus(3, "load", 0.5)]
        bal = balance_island(buses, [Generator(1, 0, 1.0)], {2: 1.5, 3: 0.5})
        assert bal.saturated
        assert bal.served[2] == pytest.approx(0.75)
        assert bal.served[3] == pytest.approx(0.25)
        assert bal.failed_loads == frozenset()

    def test_island_without_generation_sheds_and_fails(self):
        buses = [Bus(2, "load", 1.0), Bus(3, "junction")]
        bal = balance_island(buses, [], {2: 1.0})
        assert bal.failed_loads == frozenset({2})
        assert bal.served[2] == 0.0

    def test_pmin_relaxed_flag(self):
        buses = [Bus(1, "generator"), Bus(2, "load", 0.2)]
        bal = balance_island(buses, [Generator(1, 0.5, 2.0)], {2: 0.2})
        assert bal.pmin_relaxed
        assert bal.dispatch[1] == pytest.approx(0.2)


def test_balance_assembles_net_injection(triangle):
    balances, inj = balance(triangle)
    assert len(balances) == 1
    assert inj.net(1) == pytest.approx(2.0)
    assert inj.net(2) == pytest.approx(-1.0)


def test_flow_operator_matches_direct_solve(triangle):
    op = flow_operator(triangle)
    _, inj = balance(triangle)
    vec = np.zeros(len(op.bus_ids))
    for b in op.bus_ids:
        vec[op.bus_index(b)] = inj.net(b)
    flows = op.matrix @ vec
    sol = solve_dc(triangle, inj)
    for i, bid in enumerate(op.branch_ids):
        assert flows[i] == pytest.approx(sol.flows[bid], abs=1e-12)


class TestSensitivities:
    def test_triangle_direct_share(self, triangle):
        sens = sensitivities(triangle)
        assert sens.entry(1, 2) == pytest.approx(2.0 / 3.0)
        assert sens.entry(2, 2) == pytest.approx(1.0 / 3.0)
        assert sens.entry(3, 2) == pytest.approx(-1.0 / 3.0)

    def test_matches_finite_difference_unsaturated(self):
        # Generator headroom keeps the island off the saturation kink so
        # the central difference is taken on a smooth stretch.
        triangle = GridCase(
            "roomy",
            [Bus(1, "generator"), Bus(2, "load", 1.0), Bus(3, "load", 1.0)],
            [Generator(1, 0, 5.0)],
            [Branch(1, 1, 2, 0.1), Branch(2, 1, 3, 0.1), Branch(3, 2, 3, 0.1)],
        )
        triangle.validate()
        sens = sensitivities(triangle)
        h = 1e-6
        base = triangle.nominal_demands()
        for bus in (2, 3):
            up = {**base, bus: base[bus] + h}
            dn = {**base, bus: base[bus] - h}
            sol_up, _ = solve_balanced(triangle, up)
            sol_dn, _ = solve_balanced(triangle, dn)
            for bid in (1, 2, 3):
                fd = (sol_up.flows[bid] - sol_dn.flows[bid]) / (2 * h)
                assert sens.entry(bid, bus) == pytest.approx(fd, abs=1e-6)

    def test_matches_finite_difference_saturated(self):
        grid = GridCase(
            "sat",
            [Bus(1, "generator"), Bus(2, "load", 1.0), Bus(3, "load", 1.0)],
            [Generator(1, 0, 1.2)],
            [Branch(1, 1, 2, 0.1), Branch(2, 1, 3, 0.1), Branch(3, 2, 3, 0.1)],
        )
        grid.validate()
        sens = sensitivities(grid)
        h = 1e-6
        base = grid.nominal_demands()
        for bus in (2, 3):
            up = {**base, bus: base[bus] + h}
            dn = {**base, bus: base[bus] - h}
            sol_up, _ = solve_balanced(grid, up)
            sol_dn, _ = solve_balanced(grid, dn)
            for bid in (1, 2, 3):
                fd = (sol_up.flows[bid] - sol_dn.flows[bid]) / (2 * h)
                assert sens.entry(bid, bus) == pytest.approx(fd, abs=1e-6)

    def test_dead_island_column_is_zero(self):
        grid = GridCase(
            "dead",
            [Bus(1, "generator"), Bus(2, "load", 1.0), Bus(3, "load", 1.0), Bus(4, "junction")],
            [Generator(1, 0, 3)],
            [Branch(1, 1, 2, 0.1), Branch(2, 3, 4, 0.1)],
        )
        grid.validate()
        sens = sensitivities(grid)
        assert np.allclose(sens.matrix[:, sens.load_buses.index(3)], 0.0)
