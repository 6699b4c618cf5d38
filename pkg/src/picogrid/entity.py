"""Single prosumer board: channels, cell, charger, boost stage, sensors, and
the on-board threshold energy manager.

All electrical quantities are per-unit against :class:`PerUnitBase`. Energies
are per-unit power times hours, so a 1 pu source running for 300 s moves
``1 * 300 / 3600`` pu of energy into the cell.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from picogrid.profiles import DutyTable

SOURCE_POWER = 1.0
LOAD_POWER = 0.37
CELL_CAPACITY = 12.24
CELL_VOLTAGE = 0.72
BOOST_VOLTAGE = 1.0
SOURCE_VOLTAGE = 1.0
CC_CURRENT = 1.0


@dataclass(frozen=True)
class PerUnitBase:
    v_base: float = 5.0
    i_base: float = 0.5
    e_base: float = 1.0

    def __post_init__(self) -> None:
        for name in ("v_base", "i_base", "e_base"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def p_base(self) -> float:
        return self.v_base * self.i_base

    @property
    def r_base(self) -> float:
        return self.v_base / self.i_base

    def to_watts(self, p_pu: float) -> float:
        return p_pu * self.p_base

    def to_pu_power(self, watts: float) -> float:
        return watts / self.p_base


class ChannelKind(str, enum.Enum):
    PV = "pv"
    AUX = "aux"
    LOAD1 = "load1"
    LOAD2 = "load2"
    LOAD3 = "load3"
    IMPORT = "import"
    EXPORT = "export"

    @property
    def is_source(self) -> bool:
        return self in (ChannelKind.PV, ChannelKind.AUX)

    @property
    def is_load(self) -> bool:
        return self in LOAD_KINDS


LOAD_KINDS = (ChannelKind.LOAD1, ChannelKind.LOAD2, ChannelKind.LOAD3)


@dataclass(frozen=True)
class ChannelSpec:
    """Rating and drive of one switched channel.

    ``duty_table`` drives the PWM duty over time; without one the channel
    runs at the constant ``duty``. ``series_resistance`` and ``diode_drop``
    model the droop resistor and diode on source/import paths (ideal by
    default).
    """

    kind: ChannelKind
    nominal_power: float = 0.0
    duty: float = 0.0
    duty_table: DutyTable | None = None
    connected: bool = False
    series_resistance: float = 0.0
    diode_drop: float = 0.0

    def __post_init__(self) -> None:
        if self.nominal_power == 0.0:
            default = LOAD_POWER if self.kind.is_load else SOURCE_POWER
            object.__setattr__(self, "nominal_power", default)
        if not self.nominal_power > 0:
            raise ValueError(f"nominal power must be positive, got {self.nominal_power}")
        if not 0.0 <= self.duty <= 1.0:
            raise ValueError(f"duty must be in [0, 1], got {self.duty}")
        if self.series_resistance < 0 or self.diode_drop < 0:
            raise ValueError("series resistance and diode drop must be >= 0")

    def duty_at(self, t: float) -> float:
        if self.duty_table is not None:
            return self.duty_table.duty_at(t)
        return self.duty


class ChargerMode(str, enum.Enum):
    CC = "CC"
    CV = "CV"


@dataclass(frozen=True)
class CellState:
    soc: float = 50.0
    capacity: float = CELL_CAPACITY
    nominal_voltage: float = CELL_VOLTAGE
    cc_current: float = CC_CURRENT
    cv_soc_knee: float = 90.0
    charger_mode: ChargerMode = ChargerMode.CC

    def __post_init__(self) -> None:
        if not 0.0 <= self.soc <= 100.0:
            raise ValueError(f"soc must be in [0, 100], got {self.soc}")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if not 0.0 <= self.cv_soc_knee < 100.0:
            raise ValueError(f"cv_soc_knee must be in [0, 100), got {self.cv_soc_knee}")
        mode = ChargerMode.CV if self.soc >= self.cv_soc_knee else ChargerMode.CC
        object.__setattr__(self, "charger_mode", mode)


@dataclass(frozen=True)
class SwitchVector:
    """Gate state per channel; source and load entries are PWM duties."""

    pv: float = 0.0
    aux: float = 0.0
    imp: bool = False
    l1: float = 0.0
    l2: float = 0.0
    l3: float = 0.0
    exp: bool = False

    @property
    def loads(self) -> tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.pv, self.aux, float(self.imp), self.l1, self.l2, self.l3, float(self.exp))


ALL_OFF = SwitchVector()

VOLTAGE_SENSORS = ("v_pv", "v_as", "v_im", "v_ce", "v_bo")
CURRENT_SENSORS = ("i_pv", "i_as", "i_im", "i_ce", "i_l1", "i_l2", "i_l3", "i_ex")


@dataclass(frozen=True)
class Measurement:
    v: tuple[float, ...]
    i: tuple[float, ...]
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if len(self.v) != len(VOLTAGE_SENSORS) or len(self.i) != len(CURRENT_SENSORS):
            raise ValueError("measurement needs 5 voltages and 8 currents")

    def as_dict(self) -> dict[str, float]:
        return {**dict(zip(VOLTAGE_SENSORS, self.v)), **dict(zip(CURRENT_SENSORS, self.i))}


@dataclass(frozen=True)
class Setpoints:
    """SOC thresholds in percent. Values outside [0, 100] pin a channel on or off."""

    load_thresholds: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    import_threshold: float = -1.0
    export_threshold: float = 100.0

    def __post_init__(self) -> None:
        thresholds = tuple(float(x) for x in self.load_thresholds)
        if len(thresholds) != 3:
            raise ValueError("need exactly 3 load thresholds")
        object.__setattr__(self, "load_thresholds", thresholds)
        for value in (*thresholds, self.import_threshold, self.export_threshold):
            if math.isnan(value) or value == math.inf:
                raise ValueError(f"threshold must be finite or -inf, got {value}")

    def as_fields(self) -> list[float]:
        return [*self.load_thresholds, self.import_threshold, self.export_threshold]

    @classmethod
    def from_fields(cls, values: Sequence[float]) -> Setpoints:
        return cls(tuple(values[:3]), values[3], values[4])


@dataclass(frozen=True)
class UserSchedule:
    """Per-load demand windows ``[start, end)`` in seconds.

    A load absent from ``windows`` is demanded at all times.
    """

    windows: dict[ChannelKind, tuple[tuple[float, float], ...]] = field(default_factory=dict)

    def demands(self, kind: ChannelKind, t: float) -> bool:
        spans = self.windows.get(kind)
        if spans is None:
            return True
        return any(start <= t < end for start, end in spans)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_v: float | tuple[float, ...] = 0.0
    sigma_i: float | tuple[float, ...] = 0.0

    def sigmas(self) -> tuple[np.ndarray, np.ndarray]:
        sv = np.broadcast_to(np.asarray(self.sigma_v, dtype=float), (len(VOLTAGE_SENSORS),))
        si = np.broadcast_to(np.asarray(self.sigma_i, dtype=float), (len(CURRENT_SENSORS),))
        if (sv < 0).any() or (si < 0).any():
            raise ValueError("noise sigma must be >= 0")
        return sv, si

    @property
    def enabled(self) -> bool:
        sv, si = self.sigmas()
        return bool(sv.any() or si.any())


@dataclass(frozen=True)
class OperatingPoint:
    """True electrical values of a board over one tick."""

    v: tuple[float, ...] = (0.0,) * 5
    i: tuple[float, ...] = (0.0,) * 8
    source_power: float = 0.0
    import_power: float = 0.0
    load_power: float = 0.0
    export_power: float = 0.0
    conditioning_loss: float = 0.0
    boost_loss: float = 0.0
    charge_power: float = 0.0
    discharge_power: float = 0.0


def _default_channels() -> dict[ChannelKind, ChannelSpec]:
    return {kind: ChannelSpec(kind) for kind in ChannelKind}


@dataclass
class BoardState:
    """Mutable state of one board; owned by exactly one caller at a time."""

    board_id: str
    cell: CellState = field(default_factory=CellState)
    channels: dict[ChannelKind, ChannelSpec] = field(default_factory=_default_channels)
    setpoints: Setpoints = field(default_factory=Setpoints)
    schedule: UserSchedule = field(default_factory=UserSchedule)
    boost_efficiency: float = 1.0
    switches: SwitchVector = ALL_OFF
    point: OperatingPoint | None = None

    def __post_init__(self) -> None:
        channels = _default_channels()
        channels.update(self.channels)
        for kind, spec in channels.items():
            if spec.kind is not kind:
                raise ValueError(f"channel spec for {kind.value} has kind {spec.kind.value}")
        self.channels = channels
        if not 0 < self.boost_efficiency <= 1.0:
            raise ValueError(f"boost efficiency must be in (0, 1], got {self.boost_efficiency}")
        if self.point is None:
            self.point = idle_point(self)

    @property
    def soc(self) -> float:
        return self.cell.soc

    @property
    def boost_active(self) -> bool:
        return self.cell.soc > 0.0


def channel_power(duty: float, nominal_power: float) -> float:
    """Average power through a channel switched at ``duty``: ``duty * P_c``."""
    if not 0.0 <= duty <= 1.0:
        raise ValueError(f"duty must be in [0, 1], got {duty}")
    if not nominal_power > 0:
        raise ValueError(f"nominal power must be positive, got {nominal_power}")
    return duty * nominal_power


def charge_acceptance(cell: CellState) -> float:
    """Fraction of requested charge power the charger passes to the cell.

    1.0 in CC mode; in CV mode falls linearly from 1 at the knee to 0 at full.
    """
    if cell.charger_mode is ChargerMode.CC:
        return 1.0
    return max(0.0, (100.0 - cell.soc) / (100.0 - cell.cv_soc_knee))


def integrate_cell(cell: CellState, p_in: float, p_out: float, dt: float) -> CellState:
    """Coulomb-count the cell over ``dt`` seconds with no charger taper."""
    if p_in < 0 or p_out < 0:
        raise ValueError(f"powers must be >= 0, got p_in={p_in}, p_out={p_out}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    delta = 100.0 * (p_in - p_out) * (dt / 3600.0) / cell.capacity
    soc = min(100.0, max(0.0, cell.soc + delta))
    return replace(cell, soc=soc)


def step_cell(cell: CellState, p_in: float, p_out: float, dt: float) -> CellState:
    """Advance the cell by ``dt`` seconds given charging and discharging power.

    ``p_in`` is scaled by :func:`charge_acceptance` before integrating, so the
    charge rate tapers to zero as the cell approaches full in CV mode.
    """
    if p_in < 0 or p_out < 0:
        raise ValueError(f"powers must be >= 0, got p_in={p_in}, p_out={p_out}")
    return integrate_cell(cell, p_in * charge_acceptance(cell), p_out, dt)


def em_tick(
    board: BoardState, setpoints: Setpoints, schedule: UserSchedule, t: float
) -> SwitchVector:
    """Threshold energy manager: decide every channel's gate state at ``t``.

    A load runs at its channel duty iff the SOC is strictly above its
    threshold and the user schedule demands it. Import is on below the import
    threshold and export above the export threshold; if both would be on
    neither is switched on.
    """
    soc = board.cell.soc
    loads = []
    for kind, threshold in zip(LOAD_KINDS, setpoints.load_thresholds):
        on = soc > threshold and schedule.demands(kind, t)
        loads.append(board.channels[kind].duty_at(t) if on else 0.0)
    imp = soc < setpoints.import_threshold
    exp = soc > setpoints.export_threshold
    if imp and exp:
        imp = exp = False
    return SwitchVector(
        pv=board.channels[ChannelKind.PV].duty_at(t),
        aux=board.channels[ChannelKind.AUX].duty_at(t),
        imp=imp,
        l1=loads[0],
        l2=loads[1],
        l3=loads[2],
        exp=exp,
    )


def _port_voltages(board: BoardState, terminal_voltage: float) -> tuple[float, ...]:
    v_pv = SOURCE_VOLTAGE if board.channels[ChannelKind.PV].connected else 0.0
    v_as = SOURCE_VOLTAGE if board.channels[ChannelKind.AUX].connected else 0.0
    v_bo = BOOST_VOLTAGE if board.boost_active else 0.0
    return (v_pv, v_as, terminal_voltage, board.cell.nominal_voltage, v_bo)


def idle_point(board: BoardState, terminal_voltage: float = 0.0) -> OperatingPoint:
    return OperatingPoint(v=_port_voltages(board, terminal_voltage))


def _conditioned(spec: ChannelSpec, voltage: float, current: float) -> tuple[float, float]:
    """Power at the charger input and power lost in the diode and droop resistor."""
    loss = current * (spec.diode_drop + current * spec.series_resistance)
    delivered = max(0.0, voltage * current - loss)
    return delivered, voltage * current - delivered


def import_demand(board: BoardState) -> float:
    """Constant current the charger sinks from the network while importing."""
    return board.cell.cc_current * charge_acceptance(board.cell)


def operating_point(
    board: BoardState,
    switches: SwitchVector,
    import_current: float = 0.0,
    export_current: float = 0.0,
    terminal_voltage: float = 0.0,
) -> OperatingPoint:
    """True voltages, currents, and power flows for one tick.

    Source channel currents are what the charger actually draws, i.e. already
    scaled by the charge acceptance; ``import_current`` comes from the network
    solve and is assumed to respect :func:`import_demand`.
    """
    v = _port_voltages(board, terminal_voltage)
    accept = charge_acceptance(board.cell)
    source_power = 0.0
    charge_power = 0.0
    conditioning_loss = 0.0
    source_currents = []
    for kind, duty, voltage in ((ChannelKind.PV, switches.pv, v[0]), (ChannelKind.AUX, switches.aux, v[1])):
        spec = board.channels[kind]
        p = channel_power(duty, spec.nominal_power) * accept if voltage > 0 else 0.0
        current = p / voltage if voltage > 0 else 0.0
        delivered, loss = _conditioned(spec, voltage, current)
        source_currents.append(current)
        source_power += p
        charge_power += delivered
        conditioning_loss += loss

    import_power = terminal_voltage * import_current
    delivered, loss = _conditioned(board.channels[ChannelKind.IMPORT], terminal_voltage, import_current)
    charge_power += delivered
    conditioning_loss += loss

    v_bo = v[4]
    load_currents = []
    load_power = 0.0
    for kind, duty in zip(LOAD_KINDS, switches.loads):
        p = channel_power(duty, board.channels[kind].nominal_power) if v_bo > 0 else 0.0
        load_currents.append(p / v_bo if v_bo > 0 else 0.0)
        load_power += p
    export_power = v_bo * export_current
    boost_out = load_power + export_power
    discharge_power = boost_out / board.boost_efficiency
    i_ce = (charge_power - discharge_power) / board.cell.nominal_voltage
    currents = (
        source_currents[0],
        source_currents[1],
        import_current,
        i_ce,
        *load_currents,
        export_current,
    )
    return OperatingPoint(
        v=v,
        i=currents,
        source_power=source_power,
        import_power=import_power,
        load_power=load_power,
        export_power=export_power,
        conditioning_loss=conditioning_loss,
        boost_loss=discharge_power - boost_out,
        charge_power=charge_power,
        discharge_power=discharge_power,
    )


def read_sensors(
    board: BoardState,
    noise: NoiseConfig | None = None,
    rng: np.random.Generator | None = None,
    timestamp: float = 0.0,
) -> Measurement:
    """Sample the 5 voltage and 8 current sensors of ``board``.

    With noise enabled, each reading gets zero-mean Gaussian noise drawn from
    ``rng``; 13 normals are consumed per call. Noise off returns exact values
    and leaves ``rng`` untouched.
    """
    point = board.point if board.point is not None else idle_point(board)
    if noise is None or not noise.enabled:
        return Measurement(tuple(point.v), tuple(point.i), timestamp)
    if rng is None:
        raise ValueError("noisy sensors need an rng")
    sv, si = noise.sigmas()
    dv = rng.normal(0.0, 1.0, size=sv.shape) * sv
    di = rng.normal(0.0, 1.0, size=si.shape) * si
    v = tuple(float(x) for x in np.asarray(point.v) + dv)
    i = tuple(float(x) for x in np.asarray(point.i) + di)
    return Measurement(v, i, timestamp)


def active_loads(switches: SwitchVector) -> frozenset[int]:
    """1-based indices of load channels with nonzero duty."""
    return frozenset(k + 1 for k, duty in enumerate(switches.loads) if duty > 0)


def make_board(
    board_id: str,
    soc: float = 50.0,
    channels: Iterable[ChannelSpec] = (),
    **kwargs,
) -> BoardState:
    cell = kwargs.pop("cell", None) or CellState(soc=soc)
    return BoardState(board_id, cell=cell, channels={c.kind: c for c in channels}, **kwargs)
