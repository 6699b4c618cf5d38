import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import grid_bus_voltage
from picogrid.entity import SwitchVector
from picogrid.network import (
    KCL_TOL,
    Exporter,
    Importer,
    NetworkError,
    NetworkTopology,
    SwitchViolation,
    check_switches,
    solve_bus,
    validate_switches,
)


def topo(resistances, v_min=0.5):
    return NetworkTopology(tuple(resistances), resistances, v_min)


class TestSolveBus:
    def test_two_exporters_share_by_conductance(self):
        t = topo({"PB1": 0.1, "PB2": 0.1, "PB3": 0.2})
        sol = solve_bus(t, [Exporter("PB1", 1.0, 0.1), Exporter("PB3", 1.0, 0.2)], [Importer("PB2", 1.0, 0.1)])
        # oracle: (1 - v)(1/0.1 + 1/0.2) = 1
        v_closed = 1 - 1 / 15
        assert sol.v_bus == pytest.approx(v_closed, abs=1e-9)
        assert sol.v_bus == pytest.approx(grid_bus_voltage([(1.0, 0.1), (1.0, 0.2)], 1.0, 0.5), abs=1e-6)
        assert sol.v_bus == pytest.approx(0.9333, abs=5e-5)
        assert sol.export_current["PB1"] == pytest.approx(0.6667, abs=5e-5)
        assert sol.export_current["PB3"] == pytest.approx(0.3333, abs=5e-5)
        assert sol.kcl_residual <= KCL_TOL
        assert not sol.curtailed

    def test_no_importers_zero_currents(self):
        t = topo({"PB1": 0.1, "PB3": 0.2})
        sol = solve_bus(t, [Exporter("PB1", 1.0, 0.1), Exporter("PB3", 1.0, 0.2)], [])
        assert sol.export_current == {"PB1": 0.0, "PB3": 0.0}
        assert sol.v_bus == 1.0
        assert sol.line_loss == 0.0

    def test_single_path(self):
        t = topo({"A": 0.3, "B": 0.3})
        sol = solve_bus(t, [Exporter("A", 1.0, 0.3)], [Importer("B", 0.8, 0.3)])
        assert sol.export_current["A"] == pytest.approx(0.8, abs=1e-9)
        assert sol.import_current["B"] == 0.8

    def test_curtailment_at_min_bus_voltage(self):
        t = topo({"A": 0.5, "B": 0.5}, v_min=0.8)
        sol = solve_bus(t, [Exporter("A", 1.0, 0.5)], [Importer("B", 1.0, 0.5)])
        # oracle: (1 - 0.8) / 0.5
        assert sol.curtailed
        assert sol.v_bus == pytest.approx(0.8)
        assert sol.import_current["B"] == pytest.approx(0.4, abs=1e-12)
        assert sol.export_current["A"] == pytest.approx(0.4, abs=1e-12)

    def test_curtailment_is_proportional(self):
        t = topo({"A": 0.5, "B": 0.5, "C": 0.5}, v_min=0.8)
        sol = solve_bus(t, [Exporter("A", 1.0, 0.5)], [Importer("B", 1.0, 0.5), Importer("C", 3.0, 0.5)])
        assert sol.import_current["C"] / sol.import_current["B"] == pytest.approx(3.0)
        assert sol.kcl_residual <= KCL_TOL

    def test_no_exporters_dead_bus(self):
        sol = solve_bus(topo({"A": 0.1}), [], [Importer("A", 1.0, 0.1)])
        assert sol.import_current["A"] == 0.0
        assert sol.curtailed

    def test_empty_topology(self):
        with pytest.raises(NetworkError):
            solve_bus(NetworkTopology((), {}), [], [])

    def test_overlapping_lists_rejected(self):
        t = topo({"A": 0.1})
        with pytest.raises(NetworkError):
            solve_bus(t, [Exporter("A", 1.0, 0.1)], [Importer("A", 1.0, 0.1)])

    def test_negative_demand_rejected(self):
        t = topo({"A": 0.1, "B": 0.1})
        with pytest.raises(NetworkError):
            solve_bus(t, [Exporter("A", 1.0, 0.1)], [Importer("B", -1.0, 0.1)])

    def test_topology_needs_positive_resistance(self):
        with pytest.raises(NetworkError):
            NetworkTopology(("A",), {"A": 0.0})

    def test_line_loss_closes_power_balance(self):
        t = topo({"A": 0.1, "B": 0.2, "C": 0.15})
        sol = solve_bus(t, [Exporter("A", 1.0, 0.1), Exporter("B", 1.0, 0.2)], [Importer("C", 1.0, 0.15)])
        out = sum(1.0 * i for i in sol.export_current.values())
        received = sol.terminal_voltage["C"] * sol.import_current["C"]
        assert out - received == pytest.approx(sol.line_loss, abs=1e-12)


instance = st.integers(1, 5).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n),
        st.lists(st.floats(0.0, 2.0), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )
)


def build(resistances, demands, exporting):
    ids = [f"B{k}" for k in range(len(resistances))]
    t = topo(dict(zip(ids, resistances)))
    ex = [Exporter(b, 1.0, r) for b, r, e in zip(ids, resistances, exporting) if e]
    im = [Importer(b, d, r) for b, r, d, e in zip(ids, resistances, demands, exporting) if not e]
    return t, ex, im


class TestSolverProperties:
    @settings(max_examples=200)
    @given(instance)
    def test_kcl(self, inst):
        sol = solve_bus(*build(*inst))
        assert sol.kcl_residual <= KCL_TOL

    @settings(max_examples=100)
    @given(instance)
    def test_lower_resistance_exports_more(self, inst):
        t, ex, im = build(*inst)
        sol = solve_bus(t, ex, im)
        for a in ex:
            for b in ex:
                if a.resistance < b.resistance:
                    assert sol.export_current[a.board_id] >= sol.export_current[b.board_id]

    @settings(max_examples=100)
    @given(instance, st.floats(0.0, 2.0))
    def test_more_demand_never_raises_bus(self, inst, extra):
        t, ex, im = build(*inst)
        if not im:
            return
        more = [Importer(im[0].board_id, im[0].demand + extra, im[0].resistance), *im[1:]]
        assert solve_bus(t, ex, more).v_bus <= solve_bus(t, ex, im).v_bus + 1e-12

    @given(instance)
    def test_zero_demand_fixed_point(self, inst):
        resistances, _, exporting = inst
        t, ex, im = build(resistances, [0.0] * len(resistances), exporting)
        sol = solve_bus(t, ex, im)
        if ex:
            assert sol.v_bus == 1.0
        assert all(i == 0.0 for i in sol.export_current.values())

    def test_matches_grid_oracle_sample(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n_ex = rng.integers(1, 5)
            rs = rng.uniform(0.05, 1.0, size=n_ex)
            demand = rng.uniform(0.0, 2.0)
            ids = [f"E{k}" for k in range(n_ex)]
            t = topo({**dict(zip(ids, rs)), "I": 0.1})
            sol = solve_bus(t, [Exporter(b, 1.0, r) for b, r in zip(ids, rs)], [Importer("I", demand, 0.1)])
            assert abs(sol.v_bus - grid_bus_voltage([(1.0, r) for r in rs], demand, 0.5)) <= 1e-6


class TestValidateSwitches:
    def test_ok(self):
        assert validate_switches({"A": SwitchVector(imp=True), "B": SwitchVector(exp=True)}) == []

    def test_violation_names_board(self):
        bad = {"A": SwitchVector(imp=True), "B": SwitchVector(imp=True, exp=True)}
        assert validate_switches(bad) == ["B"]
        with pytest.raises(SwitchViolation, match="B") as info:
            check_switches(bad, tick=7)
        assert info.value.tick == 7

    def test_empty_is_ok(self):
        assert validate_switches({}) == []


def test_bracketed_oracle_matches_full_sweep():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sources = [(1.0, r) for r in rng.uniform(0.05, 1.0, rng.integers(1, 5))]
        demand = rng.uniform(0.0, 2.0)
        assert grid_bus_voltage(sources, demand, 0.5) == grid_bus_voltage(sources, demand, 0.5, coarse=None)
