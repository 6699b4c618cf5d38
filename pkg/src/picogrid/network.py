"""Quasi-static DC exchange on a single common bus.

Exporters are Thevenin sources (boost output behind the line resistance);
importers are constant-current sinks. The bus voltage balances the two and
is found by bisection on the monotone exporter-delivery curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from picogrid.entity import SwitchVector

KCL_TOL = 1e-9
_BISECT_TOL = 1e-13


class NetworkError(ValueError):
    pass


class SwitchViolation(RuntimeError):
    """Some boards have import and export switched on together."""

    def __init__(self, boards: Sequence[str], tick: int | None = None):
        self.boards = tuple(boards)
        self.tick = tick
        where = f" at tick {tick}" if tick is not None else ""
        super().__init__(f"import and export both on{where} for: {', '.join(self.boards)}")


@dataclass(frozen=True)
class NetworkTopology:
    boards: tuple[str, ...]
    line_resistance: Mapping[str, float]
    v_min_bus: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "boards", tuple(self.boards))
        object.__setattr__(self, "line_resistance", dict(self.line_resistance))
        missing = [b for b in self.boards if b not in self.line_resistance]
        if missing:
            raise NetworkError(f"no line resistance for {missing}")
        bad = [b for b in self.boards if not self.line_resistance[b] > 0]
        if bad:
            raise NetworkError(f"line resistance must be positive for {bad}")
        if len(set(self.boards)) != len(self.boards):
            raise NetworkError("duplicate board ids")


@dataclass(frozen=True)
class Exporter:
    board_id: str
    source_voltage: float
    resistance: float


@dataclass(frozen=True)
class Importer:
    board_id: str
    demand: float
    resistance: float


@dataclass(frozen=True)
class NetworkSolution:
    v_bus: float
    export_current: dict[str, float] = field(default_factory=dict)
    import_current: dict[str, float] = field(default_factory=dict)
    terminal_voltage: dict[str, float] = field(default_factory=dict)
    line_loss: float = 0.0
    curtailed: bool = False

    @property
    def kcl_residual(self) -> float:
        return abs(sum(self.export_current.values()) - sum(self.import_current.values()))

    @property
    def delivered(self) -> float:
        return sum(self.import_current.values())


def _delivery(exporters: Sequence[Exporter], v: float) -> float:
    return sum(max(0.0, (e.source_voltage - v) / e.resistance) for e in exporters)


def _bisect(exporters: Sequence[Exporter], demand: float, lo: float, hi: float) -> float:
    """Bus voltage in ``[lo, hi]`` where delivery equals ``demand``.

    Delivery is non-increasing in ``v``; invariant: delivery(lo) >= demand >= delivery(hi).
    """
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _delivery(exporters, mid) >= demand:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _BISECT_TOL:
            break
    # pick the bracket end with the smaller residual
    if abs(_delivery(exporters, lo) - demand) <= abs(_delivery(exporters, hi) - demand):
        return lo
    return hi


def solve_bus(
    topology: NetworkTopology,
    exporters: Sequence[Exporter],
    importers: Sequence[Importer],
) -> NetworkSolution:
    """Solve one timestep of exchange on the common bus.

    Exporter ``i`` delivers ``max(0, (V_i - v_bus) / R_i)``. If meeting the
    full import demand would pull the bus below ``v_min_bus``, the bus sits at
    ``v_min_bus`` and every importer is scaled down by the same factor.
    With no exporters the bus is dead (0 pu) and nothing flows.

    Raises:
        NetworkError: empty topology, unknown or overlapping boards, or a
            negative demand.
    """
    if not topology.boards:
        raise NetworkError("empty topology")
    known = set(topology.boards)
    ex_ids = [e.board_id for e in exporters]
    im_ids = [i.board_id for i in importers]
    unknown = (set(ex_ids) | set(im_ids)) - known
    if unknown:
        raise NetworkError(f"boards not in topology: {sorted(unknown)}")
    both = set(ex_ids) & set(im_ids)
    if both or len(set(ex_ids)) != len(ex_ids) or len(set(im_ids)) != len(im_ids):
        raise NetworkError(f"exporter and importer lists must be disjoint and unique: {sorted(both)}")
    if any(i.demand < 0 for i in importers):
        raise NetworkError("import demand must be >= 0")

    live = [e for e in exporters if e.source_voltage > 0]
    demand = sum(i.demand for i in importers)
    v_top = max((e.source_voltage for e in live), default=0.0)

    if demand == 0.0 or not live:
        v_bus = v_top
        return NetworkSolution(
            v_bus=v_bus,
            export_current={e.board_id: 0.0 for e in exporters},
            import_current={i.board_id: 0.0 for i in importers},
            terminal_voltage={b: v_bus for b in topology.boards},
            curtailed=demand > 0.0,
        )

    v_floor = min(topology.v_min_bus, v_top)
    capacity = _delivery(live, v_floor)
    if capacity < demand:
        v_bus, scale, curtailed = v_floor, capacity / demand, True
    else:
        v_bus, scale, curtailed = _bisect(live, demand, v_floor, v_top), 1.0, False

    export_current = {e.board_id: 0.0 for e in exporters}
    for e in live:
        export_current[e.board_id] = max(0.0, (e.source_voltage - v_bus) / e.resistance)
    import_current = {i.board_id: i.demand * scale for i in importers}

    terminal = {b: v_bus for b in topology.boards}
    loss = 0.0
    for e in exporters:
        current = export_current[e.board_id]
        terminal[e.board_id] = v_bus + current * e.resistance
        loss += current * current * e.resistance
    for i in importers:
        current = import_current[i.board_id]
        terminal[i.board_id] = v_bus - current * i.resistance
        loss += current * current * i.resistance
    return NetworkSolution(v_bus, export_current, import_current, terminal, loss, curtailed)


def validate_switches(switches: Mapping[str, SwitchVector]) -> list[str]:
    """Board ids whose import and export switches are both on (empty when ok)."""
    return [board for board, u in switches.items() if u.imp and u.exp]


def check_switches(switches: Mapping[str, SwitchVector], tick: int | None = None) -> None:
    offenders = validate_switches(switches)
    if offenders:
        raise SwitchViolation(offenders, tick)
