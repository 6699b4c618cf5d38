"""Scenario configuration and the deterministic tick loop.

Each tick at time ``t`` runs, in order:

1. remote-node boundary actions,
2. every board's energy manager,
3. the anti-circulation check,
4. the bus solve,
5. cell integration and sensor sampling,
6. telemetry posts on every ``post_every``-th tick boundary.

Telemetry is stamped with the boundary time it describes; the initial state
is posted at ``t = 0`` before the first tick, so a remote node acting at an
interval boundary reads the SOC at exactly that boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from picogrid.broker.core import DEFAULT_MIN_INTERVAL, Broker, BrokerError, ChannelInfo
from picogrid.entity import (
    BOOST_VOLTAGE,
    CURRENT_SENSORS,
    BoardState,
    CellState,
    ChannelKind,
    ChannelSpec,
    Measurement,
    NoiseConfig,
    PerUnitBase,
    Setpoints,
    UserSchedule,
    em_tick,
    import_demand,
    integrate_cell,
    operating_point,
    read_sensors,
)
from picogrid.network import (
    Exporter,
    Importer,
    NetworkSolution,
    NetworkTopology,
    check_switches,
    solve_bus,
)
from picogrid.profiles import (
    DutyTable,
    analytic_energy,
    bundled_profile,
    load_profile,
    prepare_duty_table,
)
from picogrid.remote import (
    BOARD_FIELDS,
    SETPOINT_FIELDS,
    ChannelRef,
    ControlLoop,
    IntervalPlan,
    IntervalThresholdPolicy,
    PolicyBinding,
    StaticThresholdPolicy,
    WallClock,
    decode_setpoints,
)
from picogrid.trace import BoardRecord, Trace, TraceRecord

log = logging.getLogger(__name__)

SHIPPED = ("exp1", "exp2", "exp3")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileSource:
    source: str
    alpha: float = 1.0
    column: str = "power_w"
    rescale_to: float | None = None


@dataclass(frozen=True)
class ChannelConfig:
    duty: float = 1.0
    profile: ProfileSource | None = None
    schedule: tuple[tuple[float, float], ...] | None = None
    nominal_power: float | None = None
    series_resistance: float = 0.0
    diode_drop: float = 0.0


@dataclass(frozen=True)
class BoardConfig:
    board_id: str
    soc: float = 50.0
    line_resistance: float | None = None
    capacity: float = 12.24
    cc_current: float = 1.0
    cv_soc_knee: float = 90.0
    boost_efficiency: float = 1.0
    setpoints: Setpoints = field(default_factory=Setpoints)
    channels: dict[ChannelKind, ChannelConfig] = field(default_factory=dict)
    noise: NoiseConfig | None = None


@dataclass(frozen=True)
class RemoteConfig:
    board_id: str
    plan: IntervalPlan | None = None
    static: Setpoints | None = None
    import_threshold: float = -1.0
    export_threshold: float = 100.0
    poll_interval: float = 10.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    boards: tuple[BoardConfig, ...]
    duration: float
    tick: float = 10.0
    post_every: int = 2
    seed: int = 0
    base: PerUnitBase = field(default_factory=PerUnitBase)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    v_min_bus: float = 0.5
    min_update_interval: float = DEFAULT_MIN_INTERVAL
    remote: tuple[RemoteConfig, ...] = ()
    root: Path | None = None

    def __post_init__(self) -> None:
        if not self.tick > 0 or not float(self.tick).is_integer():
            raise ConfigError(f"tick must be a positive whole number of seconds, got {self.tick}")
        if self.duration < 0:
            raise ConfigError(f"duration must be >= 0, got {self.duration}")
        ticks = self.duration / self.tick
        if not math.isclose(ticks, round(ticks), abs_tol=1e-9):
            raise ConfigError(f"duration {self.duration} is not a multiple of tick {self.tick}")
        if self.post_every < 1:
            raise ConfigError("post_every must be >= 1")
        ids = [b.board_id for b in self.boards]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate board ids in {ids}")
        for b in self.boards:
            if not 0.0 <= b.soc <= 100.0:
                raise ConfigError(f"{b.board_id}: initial soc {b.soc} outside [0, 100]")
        for r in self.remote:
            if r.board_id not in ids:
                raise ConfigError(f"remote binding for unknown board {r.board_id!r}")
        if len({r.board_id for r in self.remote}) != len(self.remote):
            raise ConfigError("at most one remote binding per board")

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.tick))


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _setpoints(doc: Mapping[str, Any] | None, default: Setpoints) -> Setpoints:
    if doc is None:
        return default
    loads = doc.get("loads", default.load_thresholds)
    if isinstance(loads, (int, float)):
        loads = [loads] * 3
    return Setpoints(
        tuple(float(x) for x in loads),
        float(doc.get("import", default.import_threshold)),
        float(doc.get("export", default.export_threshold)),
    )


def _noise(doc: Mapping[str, Any] | None) -> NoiseConfig | None:
    if doc is None:
        return None

    def sigma(value):
        return tuple(float(x) for x in value) if isinstance(value, (list, tuple)) else float(value)

    return NoiseConfig(sigma(doc.get("sigma_v", 0.0)), sigma(doc.get("sigma_i", 0.0)))


def _channel(doc: Mapping[str, Any]) -> ChannelConfig:
    profile = doc.get("profile")
    if profile is not None:
        if isinstance(profile, str):
            profile = {"source": profile}
        profile = ProfileSource(
            source=str(profile["source"]),
            alpha=float(profile.get("alpha", 1.0)),
            column=str(profile.get("column", "power_w")),
            rescale_to=None if profile.get("rescale_to") is None else float(profile["rescale_to"]),
        )
    schedule = doc.get("schedule")
    if schedule is not None:
        schedule = tuple((float(a), float(b)) for a, b in schedule)
        if any(b < a for a, b in schedule):
            raise ConfigError(f"schedule window ends before it starts: {schedule}")
    return ChannelConfig(
        duty=float(doc.get("duty", 1.0)),
        profile=profile,
        schedule=schedule,
        nominal_power=None if doc.get("nominal_power") is None else float(doc["nominal_power"]),
        series_resistance=float(doc.get("series_resistance", 0.0)),
        diode_drop=float(doc.get("diode_drop", 0.0)),
    )


def _board(doc: Mapping[str, Any]) -> BoardConfig:
    try:
        board_id = str(doc["id"])
    except KeyError:
        raise ConfigError("every board needs an 'id'") from None
    cell = doc.get("cell", {})
    channels = {}
    for name, body in (doc.get("channels") or {}).items():
        try:
            kind = ChannelKind(name)
        except ValueError:
            raise ConfigError(f"{board_id}: unknown channel {name!r}") from None
        channels[kind] = _channel(body or {})
    r_line = doc.get("line_resistance")
    return BoardConfig(
        board_id=board_id,
        soc=float(doc.get("soc", 50.0)),
        line_resistance=None if r_line is None else float(r_line),
        capacity=float(cell.get("capacity", 12.24)),
        cc_current=float(cell.get("cc_current", 1.0)),
        cv_soc_knee=float(cell.get("cv_soc_knee", 90.0)),
        boost_efficiency=float(doc.get("boost_efficiency", 1.0)),
        setpoints=_setpoints(doc.get("setpoints"), Setpoints()),
        channels=channels,
        noise=_noise(doc.get("noise")),
    )


def _remote(doc: Mapping[str, Any]) -> RemoteConfig:
    policy = doc.get("policy", "interval-threshold")
    plan = None
    static = None
    if policy == "interval-threshold":
        rows = doc.get("intervals")
        if not rows:
            raise ConfigError("interval-threshold policy needs 'intervals'")
        plan = IntervalPlan.from_rows([(float(r["duration"]), r["offsets"]) for r in rows])
    elif policy == "static-threshold":
        static = _setpoints(doc.get("setpoints"), Setpoints())
    else:
        raise ConfigError(f"unknown policy {policy!r}")
    return RemoteConfig(
        board_id=str(doc["board"]),
        plan=plan,
        static=static,
        import_threshold=float(doc.get("import_threshold", -1.0)),
        export_threshold=float(doc.get("export_threshold", 100.0)),
        poll_interval=float(doc.get("poll_interval", 10.0)),
    )


def parse_scenario(doc: Mapping[str, Any], root: Path | None = None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a parsed YAML mapping."""
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario file must be a mapping")
    try:
        base = PerUnitBase(**(doc.get("base") or {}))
        tick = float(doc.get("tick", 10))
        return ScenarioConfig(
            name=str(doc.get("name", "scenario")),
            boards=tuple(_board(b) for b in doc.get("boards") or ()),
            duration=float(doc["duration"]),
            tick=tick,
            post_every=int(doc.get("post_every", 2)),
            seed=int(doc.get("seed", 0)),
            base=base,
            noise=_noise(doc.get("noise")) or NoiseConfig(),
            v_min_bus=float((doc.get("network") or {}).get("v_min_bus", 0.5)),
            min_update_interval=float((doc.get("broker") or {}).get("min_update_interval", DEFAULT_MIN_INTERVAL)),
            remote=tuple(_remote(r) for r in doc.get("remote") or ()),
            root=root,
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_scenario(ref: str | Path) -> ScenarioConfig:
    """Load a scenario by file path or by shipped name (``exp1``, ``exp2``, ``exp3``)."""
    ref_str = str(ref)
    if ref_str in SHIPPED:
        text = resources.files("picogrid.scenarios").joinpath(f"{ref_str}.yaml").read_text()
        return parse_scenario(yaml.safe_load(text))
    path = Path(ref)
    if not path.exists():
        raise ConfigError(f"no scenario file {path} (shipped: {', '.join(SHIPPED)})")
    return parse_scenario(yaml.safe_load(path.read_text()), root=path.parent)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _duty_table(source: ProfileSource, tick: float, root: Path | None) -> DutyTable:
    if source.source.startswith("bundled:"):
        profile = bundled_profile(source.source.split(":", 1)[1])
    else:
        path = Path(source.source)
        if not path.is_absolute() and root is not None:
            path = root / path
        profile = load_profile(path, column=source.column)
    return prepare_duty_table(profile, source.alpha, tick, source.rescale_to)


def build_board(cfg: BoardConfig, tick: float, root: Path | None = None) -> BoardState:
    specs = []
    windows = {}
    for kind, ch in cfg.channels.items():
        table = _duty_table(ch.profile, tick, root) if ch.profile is not None else None
        specs.append(
            ChannelSpec(
                kind,
                nominal_power=ch.nominal_power or 0.0,
                duty=ch.duty,
                duty_table=table,
                connected=True,
                series_resistance=ch.series_resistance,
                diode_drop=ch.diode_drop,
            )
        )
        if ch.schedule is not None:
            if not kind.is_load:
                raise ConfigError(f"{cfg.board_id}: schedules apply to load channels only")
            windows[kind] = ch.schedule
    cell = CellState(soc=cfg.soc, capacity=cfg.capacity, cc_current=cfg.cc_current, cv_soc_knee=cfg.cv_soc_knee)
    return BoardState(
        cfg.board_id,
        cell=cell,
        channels={s.kind: s for s in specs},
        setpoints=cfg.setpoints,
        schedule=UserSchedule(windows),
        boost_efficiency=cfg.boost_efficiency,
    )


@dataclass
class _BoardRuntime:
    state: BoardState
    config: BoardConfig
    rng: np.random.Generator
    noise: NoiseConfig
    data: ChannelInfo
    setpoint: ChannelInfo | None = None
    measurement: Measurement | None = None


class Simulation:
    """One scenario run; use :func:`run_scenario` unless you need the pieces."""

    def __init__(self, config: ScenarioConfig, broker=None, pace: str = "fast"):
        if pace not in ("fast", "real"):
            raise ConfigError(f"pace must be 'fast' or 'real', got {pace!r}")
        self.config = config
        self.broker = broker if broker is not None else Broker()
        self.pace = pace
        seeds = np.random.SeedSequence(config.seed).spawn(len(config.boards))
        remote_by_board = {r.board_id: r for r in config.remote}
        self.boards: dict[str, _BoardRuntime] = {}
        self.loops: list[ControlLoop] = []
        for cfg, seed in zip(config.boards, seeds):
            state = build_board(cfg, config.tick, config.root)
            data = self.broker.create_channel("board-data", BOARD_FIELDS, config.min_update_interval)
            runtime = _BoardRuntime(
                state=state,
                config=cfg,
                rng=np.random.default_rng(seed),
                noise=cfg.noise or config.noise,
                data=data,
            )
            remote = remote_by_board.get(cfg.board_id)
            if remote is not None:
                runtime.setpoint = self.broker.create_channel(
                    "setpoint", SETPOINT_FIELDS, config.min_update_interval
                )
                self.loops.append(self._control_loop(remote, runtime))
            self.boards[cfg.board_id] = runtime
        networked = {b.board_id: b.line_resistance for b in config.boards if b.line_resistance is not None}
        self.topology = (
            NetworkTopology(tuple(networked), networked, config.v_min_bus) if networked else None
        )

    def _control_loop(self, remote: RemoteConfig, runtime: _BoardRuntime) -> ControlLoop:
        assert runtime.setpoint is not None
        if remote.static is not None:
            policy = StaticThresholdPolicy(remote.static)
            plan = IntervalPlan.single(max(self.config.duration, self.config.tick))
        else:
            policy = IntervalThresholdPolicy(remote.import_threshold, remote.export_threshold)
            plan = remote.plan
        binding = PolicyBinding(
            ChannelRef(runtime.data.channel_id, runtime.data.read_key),
            ChannelRef(runtime.setpoint.channel_id, runtime.setpoint.write_key),
            policy,
            remote.poll_interval,
        )
        return ControlLoop(self.broker, binding, plan)

    def references(self) -> dict[str, dict[str, float]]:
        """Analytic channel energies over the horizon for every profile-driven channel."""
        refs: dict[str, dict[str, float]] = {}
        T = self.config.duration
        for board_id, rt in self.boards.items():
            for kind, spec in rt.state.channels.items():
                if spec.duty_table is None or T <= 0:
                    continue
                horizon = min(T, spec.duty_table.duration)
                refs.setdefault(board_id, {})[kind.value] = analytic_energy(
                    spec.duty_table, spec.nominal_power, horizon
                )
        return refs

    def _post(self, rt: _BoardRuntime, t: float) -> None:
        """Post the current SOC with the most recent sensor sample."""
        if rt.measurement is None:
            rt.measurement = read_sensors(rt.state, rt.noise, rt.rng, t)
        currents = dict(zip(CURRENT_SENSORS, rt.measurement.i))
        values = [rt.state.soc, *(currents[name] for name in BOARD_FIELDS[1:])]
        try:
            self.broker.write(rt.data.channel_id, rt.data.write_key, values, t)
        except BrokerError as exc:
            log.warning("%s: telemetry at t=%s dropped: %s", rt.state.board_id, t, exc)

    def _setpoints_for(self, rt: _BoardRuntime) -> Setpoints:
        if rt.setpoint is None:
            return rt.state.setpoints
        latest = decode_setpoints(self.broker.read_latest(rt.setpoint.channel_id, rt.setpoint.read_key))
        return latest if latest is not None else rt.state.setpoints

    def _solve(self, switches) -> NetworkSolution:
        if self.topology is None:
            return NetworkSolution(v_bus=0.0)
        exporters, importers = [], []
        for board_id in self.topology.boards:
            rt = self.boards[board_id]
            u = switches[board_id]
            r = self.topology.line_resistance[board_id]
            if u.exp:
                v_src = BOOST_VOLTAGE if rt.state.boost_active else 0.0
                exporters.append(Exporter(board_id, v_src, r))
            elif u.imp:
                importers.append(Importer(board_id, import_demand(rt.state), r))
        return solve_bus(self.topology, exporters, importers)

    def run(self) -> Trace:
        cfg = self.config
        trace = Trace(
            name=cfg.name,
            tick=cfg.tick,
            board_ids=tuple(self.boards),
            network_ids=self.topology.boards if self.topology else (),
            capacities={b: rt.state.cell.capacity for b, rt in self.boards.items()},
            references=self.references(),
        )
        n_ticks = cfg.n_ticks
        if n_ticks == 0:
            return trace
        wall = WallClock() if self.pace == "real" else None
        for rt in self.boards.values():
            self._post(rt, 0.0)

        for k in range(n_ticks):
            t = k * cfg.tick
            if wall is not None:
                wall.sleep_until(t)
            # 1. remote node
            for loop in self.loops:
                loop.step(t)
            # 2. energy managers
            switches = {}
            for board_id, rt in self.boards.items():
                rt.state.setpoints = self._setpoints_for(rt)
                switches[board_id] = em_tick(rt.state, rt.state.setpoints, rt.state.schedule, t)
            # 3. anti-circulation
            check_switches(switches, tick=k)
            # 4. network
            solution = self._solve(switches)
            # 5. plant
            records = {}
            for board_id, rt in self.boards.items():
                state = rt.state
                u = switches[board_id]
                terminal = solution.terminal_voltage.get(board_id, 0.0)
                point = operating_point(
                    state,
                    u,
                    import_current=solution.import_current.get(board_id, 0.0),
                    export_current=solution.export_current.get(board_id, 0.0),
                    terminal_voltage=terminal,
                )
                soc = state.cell.soc
                unclamped = soc + 100.0 * (point.charge_power - point.discharge_power) * (
                    cfg.tick / 3600.0
                ) / state.cell.capacity
                state.cell = integrate_cell(state.cell, point.charge_power, point.discharge_power, cfg.tick)
                state.switches = u
                state.point = point
                measurement = read_sensors(state, rt.noise, rt.rng, t)
                rt.measurement = measurement
                records[board_id] = BoardRecord(
                    soc=soc,
                    soc_end=state.cell.soc,
                    switches=u,
                    measurement=measurement,
                    point=point,
                    setpoints=state.setpoints,
                    clamped=not 0.0 <= unclamped <= 100.0,
                )
            trace.records.append(TraceRecord(t, records, solution))
            # 6. telemetry
            t_next = (k + 1) * cfg.tick
            if (k + 1) % cfg.post_every == 0 and k + 1 < n_ticks:
                for rt in self.boards.values():
                    self._post(rt, t_next)
        return trace


def run_scenario(config: ScenarioConfig, broker=None, pace: str = "fast") -> Trace:
    """Run ``config`` to completion; deterministic for a given config and seed."""
    return Simulation(config, broker=broker, pace=pace).run()
