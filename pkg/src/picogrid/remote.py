"""Remote operator node: polls board data channels and publishes setpoints.

A :class:`ControlLoop` is stepped with the current time and acts only at the
interval boundaries of its :class:`IntervalPlan` (plus one retry when the
board channel has no data yet). :func:`run_control_loop` drives a loop from a
clock on its own.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from picogrid.broker.core import BrokerError, ChannelEntry
from picogrid.entity import Setpoints

log = logging.getLogger(__name__)

BOARD_FIELDS = ("soc", "i_pv", "i_as", "i_im", "i_l1", "i_l2", "i_l3", "i_ex")
SETPOINT_FIELDS = ("thr_l1", "thr_l2", "thr_l3", "thr_import", "thr_export")

FALLBACK_SETPOINTS = Setpoints((0.0, 0.0, 0.0), import_threshold=100.0, export_threshold=100.0)


class ControlLoopError(RuntimeError):
    pass


@dataclass(frozen=True)
class Interval:
    duration: float
    offsets: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError(f"interval duration must be positive, got {self.duration}")
        offsets = tuple(float(x) for x in self.offsets)
        if len(offsets) != 3:
            raise ValueError(f"need exactly 3 offsets, got {len(offsets)}")
        object.__setattr__(self, "offsets", offsets)


@dataclass(frozen=True)
class IntervalPlan:
    intervals: tuple[Interval, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(self.intervals))
        if not self.intervals:
            raise ValueError("plan needs at least one interval")

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[float, Sequence[float]]]) -> IntervalPlan:
        return cls(tuple(Interval(d, tuple(o)) for d, o in rows))

    @classmethod
    def single(cls, duration: float) -> IntervalPlan:
        return cls((Interval(duration, (0.0, 0.0, 0.0)),))

    @property
    def boundaries(self) -> list[float]:
        out, t = [], 0.0
        for interval in self.intervals:
            out.append(t)
            t += interval.duration
        return out

    @property
    def horizon(self) -> float:
        return sum(i.duration for i in self.intervals)


def compute_thresholds(soc_o: float, offsets: Sequence[float]) -> tuple[float, float, float]:
    """Per-load thresholds ``soc_o + offset``, deliberately unclamped."""
    if len(offsets) != 3:
        raise ValueError(f"need exactly 3 offsets, got {len(offsets)}")
    return tuple(soc_o + d for d in offsets)  # type: ignore[return-value]


@dataclass(frozen=True)
class Observation:
    """Latest decoded board data entry."""

    timestamp: int
    values: dict[str, float | None]

    @property
    def soc(self) -> float | None:
        return self.values.get("soc")

    @classmethod
    def from_entry(cls, entry: ChannelEntry, names: Sequence[str] = BOARD_FIELDS) -> Observation:
        return cls(entry.timestamp, dict(zip(names, entry.fields)))


class Policy(Protocol):
    """Observe, then return setpoints for the interval starting now."""

    needs_observation: bool

    def setpoints(self, observation: Observation | None, interval: int, plan: IntervalPlan) -> Setpoints: ...


@dataclass(frozen=True)
class IntervalThresholdPolicy:
    """Load thresholds are the interval-start SOC plus the plan's offsets."""

    import_threshold: float = -1.0
    export_threshold: float = 100.0
    needs_observation: bool = True

    def setpoints(self, observation: Observation | None, interval: int, plan: IntervalPlan) -> Setpoints:
        if observation is None or observation.soc is None:
            raise ValueError("interval-threshold policy needs a SOC observation")
        offsets = plan.intervals[interval].offsets
        return Setpoints(compute_thresholds(observation.soc, offsets), self.import_threshold, self.export_threshold)


@dataclass(frozen=True)
class StaticThresholdPolicy:
    fixed: Setpoints
    needs_observation: bool = False

    def setpoints(self, observation: Observation | None, interval: int, plan: IntervalPlan) -> Setpoints:
        return self.fixed


@dataclass
class CallbackPolicy:
    """Wrap any ``fn(observation, interval, plan) -> Setpoints``."""

    fn: Callable[[Observation | None, int, IntervalPlan], Setpoints]
    needs_observation: bool = True

    def setpoints(self, observation: Observation | None, interval: int, plan: IntervalPlan) -> Setpoints:
        return self.fn(observation, interval, plan)


@dataclass(frozen=True)
class ChannelRef:
    channel_id: int
    key: str


@dataclass(frozen=True)
class PolicyBinding:
    data: ChannelRef
    setpoint: ChannelRef
    policy: Policy
    poll_interval: float = 10.0

    def __post_init__(self) -> None:
        if self.data.channel_id == self.setpoint.channel_id:
            raise ValueError("data and setpoint channels must differ")
        if not self.poll_interval > 0:
            raise ValueError("poll_interval must be positive")


@dataclass(frozen=True)
class PublishRecord:
    t: float
    interval: int
    setpoints: Setpoints
    source: str  # "observed" | "static" | "fallback"
    observed_at: int | None = None


@dataclass
class ControlLoop:
    broker: object
    binding: PolicyBinding
    plan: IntervalPlan
    log: list[PublishRecord] = field(default_factory=list)
    _next: int = 0
    _retry_at: float | None = None
    _failures: int = 0

    @property
    def done(self) -> bool:
        return self._next >= len(self.plan.intervals)

    def next_action_time(self) -> float | None:
        if self.done:
            return None
        if self._retry_at is not None:
            return self._retry_at
        return self.plan.boundaries[self._next]

    def step(self, t: float) -> PublishRecord | None:
        """Act if an interval boundary (or a due retry) has been reached at ``t``."""
        due = self.next_action_time()
        if due is None or t < due:
            return None
        index = self._next
        # a late step skips intervals whose successor has already started
        boundaries = self.plan.boundaries
        while index + 1 < len(boundaries) and boundaries[index + 1] <= t:
            index += 1
        self._next = index
        policy = self.binding.policy
        observation = None
        retrying = self._retry_at is not None
        if policy.needs_observation:
            try:
                observation = self._observe()
            except BrokerError as exc:
                if not retrying:
                    log.warning("board channel %s unavailable at t=%s (%s); retrying",
                                self.binding.data.channel_id, t, exc)
                    self._retry_at = t + self.binding.poll_interval
                    return None
                raise ControlLoopError(
                    f"board channel {self.binding.data.channel_id} unavailable at t={t}: {exc}"
                ) from exc
            if observation is None and not retrying:
                log.info("no board data at t=%s; retrying after %s s", t, self.binding.poll_interval)
                self._retry_at = t + self.binding.poll_interval
                return None
        if policy.needs_observation and observation is None:
            log.warning(
                "board channel %s still empty at t=%s; publishing fallback setpoints",
                self.binding.data.channel_id, t,
            )
            setpoints, source = FALLBACK_SETPOINTS, "fallback"
        else:
            setpoints = policy.setpoints(observation, index, self.plan)
            source = "observed" if policy.needs_observation else "static"
        self._publish(t, setpoints)
        record = PublishRecord(t, index, setpoints, source, observation.timestamp if observation else None)
        self.log.append(record)
        self._retry_at = None
        self._next = index + 1
        return record

    def _observe(self) -> Observation | None:
        ref = self.binding.data
        entry = self.broker.read_latest(ref.channel_id, ref.key)
        if entry is None or entry.get(1) is None:
            return None
        return Observation.from_entry(entry)

    def _publish(self, t: float, setpoints: Setpoints) -> None:
        ref = self.binding.setpoint
        try:
            self.broker.write(ref.channel_id, ref.key, setpoints.as_fields(), t)
        except BrokerError as exc:
            raise ControlLoopError(f"could not publish setpoints at t={t}: {exc}") from exc


class SimClock:
    """Virtual clock: sleeping jumps straight to the target time."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep_until(self, t: float) -> None:
        self._now = max(self._now, float(t))


class WallClock:
    """Seconds since construction, paced by real time."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep_until(self, t: float) -> None:
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)


def run_control_loop(broker, binding: PolicyBinding, plan: IntervalPlan, clock=None) -> list[PublishRecord]:
    """Run one binding through its whole plan; returns the publish log.

    With a wall clock, publish times are the clock readings rounded down to
    whole seconds.
    """
    clock = clock if clock is not None else SimClock()
    loop = ControlLoop(broker, binding, plan)
    while not loop.done:
        due = loop.next_action_time()
        assert due is not None
        clock.sleep_until(due)
        now = clock.now()
        loop.step(float(int(now)) if isinstance(clock, WallClock) else now)
    return loop.log


def decode_setpoints(entry: ChannelEntry | None) -> Setpoints | None:
    if entry is None or any(v is None for v in entry.fields[:5]):
        return None
    return Setpoints.from_fields([float(v) for v in entry.fields[:5]])  # type: ignore[arg-type]
