"""Power profiles: CSV ingestion, time rescaling, interpolation, and duty tables.

Sampling convention: ``N`` samples at interval ``tau`` cover ``N * tau``
seconds, each sample held for its interval. Interpolated times past the last
sample hold the last value.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import IO, Union

import numpy as np

CsvSource = Union[str, Path, IO[str]]

BUNDLED = ("pv", "refrigerator", "kitchen")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeriesProfile:
    samples: tuple[float, ...]
    sample_interval: float
    label: str = ""

    def __post_init__(self) -> None:
        samples = tuple(float(x) for x in self.samples)
        if len(samples) < 2:
            raise ProfileError(f"profile needs at least 2 samples, got {len(samples)}")
        if any(not math.isfinite(x) or x < 0 for x in samples):
            raise ProfileError("profile samples must be finite and >= 0")
        if not self.sample_interval > 0:
            raise ProfileError(f"sample interval must be positive, got {self.sample_interval}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.sample_interval

    @property
    def peak(self) -> float:
        return max(self.samples)


@dataclass(frozen=True)
class DutyTable:
    duties: tuple[float, ...]
    update_interval: float
    alpha: float
    peak_power: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "duties", tuple(float(d) for d in self.duties))
        if not 0.0 <= self.alpha <= 1.0:
            raise ProfileError(f"alpha must be in [0, 1], got {self.alpha}")
        if any(not 0.0 <= d <= self.alpha for d in self.duties):
            raise ProfileError("duties must lie in [0, alpha]")
        if not self.update_interval > 0:
            raise ProfileError("update interval must be positive")

    def __len__(self) -> int:
        return len(self.duties)

    @property
    def duration(self) -> float:
        return len(self.duties) * self.update_interval

    def duty_at(self, t: float) -> float:
        """Zero-order-hold lookup; 0 outside the table."""
        if t < 0:
            return 0.0
        index = int(t // self.update_interval)
        return self.duties[index] if index < len(self.duties) else 0.0


def _parse_timestamp(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(int(raw))
    except ValueError:
        pass
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(raw).timestamp()
    except ValueError as exc:
        raise ProfileError(f"bad timestamp {raw!r}") from exc


def load_profile(
    source: CsvSource,
    column: str = "power_w",
    timestamp_column: str = "timestamp",
    label: str | None = None,
) -> TimeSeriesProfile:
    """Read a uniformly sampled profile from CSV.

    Args:
        source: path or open text file with a header row.
        column: name of the numeric power column.
        timestamp_column: ISO-8601 or integer-seconds timestamps.

    Raises:
        ProfileError: missing column, fewer than 2 rows, negative or
            non-numeric power, or non-uniform timestamps.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        text = path.read_text()
        label = label if label is not None else path.stem
    else:
        text = source.read()
    reader = csv.DictReader(io.StringIO(text))
    fields = reader.fieldnames or []
    for name in (timestamp_column, column):
        if name not in fields:
            raise ProfileError(f"missing column {name!r}; have {fields}")
    times, powers = [], []
    for lineno, row in enumerate(reader, start=2):
        times.append(_parse_timestamp(row[timestamp_column]))
        try:
            power = float(row[column])
        except (TypeError, ValueError) as exc:
            raise ProfileError(f"line {lineno}: non-numeric power {row[column]!r}") from exc
        if power < 0:
            raise ProfileError(f"line {lineno}: negative power {power}")
        powers.append(power)
    if len(powers) < 2:
        raise ProfileError(f"profile needs at least 2 rows, got {len(powers)}")
    steps = np.diff(times)
    interval = float(steps[0])
    if interval <= 0 or not np.allclose(steps, interval, rtol=0, atol=1e-6):
        raise ProfileError("timestamps must be strictly increasing and uniformly spaced")
    return TimeSeriesProfile(tuple(powers), interval, label or column)


def bundled_profile(name: str) -> TimeSeriesProfile:
    """One of the shipped synthetic 96-point daily profiles (watts, 15 min)."""
    if name not in BUNDLED:
        raise ProfileError(f"unknown bundled profile {name!r}; choose from {BUNDLED}")
    ref = resources.files("picogrid.data").joinpath(f"{name}.csv")
    with ref.open("r") as fh:
        return load_profile(fh, label=name)


def rescale_time(profile: TimeSeriesProfile, target_interval: float) -> TimeSeriesProfile:
    """Compress or stretch time: same samples, new sample interval."""
    if not target_interval > 0:
        raise ProfileError(f"target interval must be positive, got {target_interval}")
    return TimeSeriesProfile(profile.samples, float(target_interval), profile.label)


def interpolate(profile: TimeSeriesProfile, new_interval: float) -> TimeSeriesProfile:
    """Linearly resample onto a ``new_interval`` grid over the profile's span.

    ``96`` samples at 20 s become ``192`` samples at 10 s. Sample instants of
    the original are reproduced exactly.
    """
    if not new_interval > 0:
        raise ProfileError(f"new interval must be positive, got {new_interval}")
    count = profile.duration / new_interval
    n_new = round(count)
    if n_new < 2 or not math.isclose(count, n_new, rel_tol=0, abs_tol=1e-9):
        raise ProfileError(
            f"interval {new_interval} s does not divide the {profile.duration} s span"
        )
    if math.isclose(new_interval, profile.sample_interval, rel_tol=0, abs_tol=1e-12):
        return profile
    src_t = np.arange(len(profile)) * profile.sample_interval
    new_t = np.arange(n_new) * new_interval
    values = np.interp(new_t, src_t, np.asarray(profile.samples))
    return TimeSeriesProfile(tuple(values.tolist()), float(new_interval), profile.label)


def to_duty_table(profile: TimeSeriesProfile, alpha: float) -> DutyTable:
    """Duty cycle per sample, ``alpha * p / max(p)``, so every duty is in [0, alpha]."""
    if not 0.0 <= alpha <= 1.0:
        raise ProfileError(f"alpha must be in [0, 1], got {alpha}")
    peak = profile.peak
    if not peak > 0:
        raise ProfileError("all-zero profile has no peak to normalise against")
    duties = tuple(min(alpha, alpha * p / peak) for p in profile.samples)
    return DutyTable(duties, profile.sample_interval, alpha, peak)


def analytic_energy(table: DutyTable, nominal_power: float, T: float) -> float:
    """Energy through a channel of rating ``nominal_power`` over ``[0, T]``.

    Rectangle rule over the held duties, truncated at ``T``; per-unit power
    times hours.
    """
    if not T > 0:
        raise ProfileError(f"T must be positive, got {T}")
    if T > table.duration + 1e-9:
        raise ProfileError(f"T={T} s exceeds table duration {table.duration} s")
    tau = table.update_interval
    total = 0.0
    for k, duty in enumerate(table.duties):
        start = k * tau
        if start >= T:
            break
        total += duty * (min(T, start + tau) - start)
    return nominal_power * total / 3600.0


def scaling_ratio(nominal_power_pu: float, profile: TimeSeriesProfile, p_base_w: float) -> float:
    """Channel rating over dataset peak, both in watts."""
    return nominal_power_pu * p_base_w / profile.peak


def prepare_duty_table(
    profile: TimeSeriesProfile,
    alpha: float,
    tick: float,
    rescale_to: float | None = None,
) -> DutyTable:
    """Rescale in time (optional), resample at the EM tick, and tabulate duties."""
    if rescale_to is not None:
        profile = rescale_time(profile, rescale_to)
    return to_duty_table(interpolate(profile, tick), alpha)

