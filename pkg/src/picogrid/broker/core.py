"""In-process data-channel broker.

Channels hold append-only, timestamped entries of up to eight numeric
fields. Every channel has a write key and a read key; writes are rate
limited by the channel's minimum update interval. Mutations on a channel are
serialised by a per-channel lock; readers see a consistent prefix.
"""

from __future__ import annotations

import json
import logging
import math
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

log = logging.getLogger(__name__)

MAX_FIELDS = 8
DEFAULT_MIN_INTERVAL = 15.0
CHANNEL_KINDS = ("board-data", "setpoint")

FieldValues = Union[Sequence[Union[float, None]], Mapping[Union[int, str], float]]


class BrokerError(Exception):
    status = 400
    reason = "bad-request"


class AuthError(BrokerError):
    status = 401
    reason = "auth"


class RateLimitError(BrokerError):
    status = 429
    reason = "rate-limit"


class ChannelNotFound(BrokerError):
    status = 404
    reason = "not-found"


@dataclass(frozen=True)
class ChannelEntry:
    entry_id: int
    timestamp: int
    fields: tuple[float | None, ...]

    def get(self, index: int) -> float | None:
        """1-based field lookup."""
        return self.fields[index - 1] if 0 < index <= len(self.fields) else None

    def to_json(self) -> dict:
        doc: dict = {"entry_id": self.entry_id, "created_at": self.timestamp}
        for n, value in enumerate(self.fields, start=1):
            doc[f"field{n}"] = value
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> ChannelEntry:
        n_fields = sum(1 for k in doc if k.startswith("field"))
        values = tuple(
            None if doc[f"field{n}"] is None else float(doc[f"field{n}"])
            for n in range(1, n_fields + 1)
        )
        return cls(int(doc["entry_id"]), int(doc["created_at"]), values)


@dataclass(frozen=True)
class ChannelInfo:
    channel_id: int
    kind: str
    field_names: tuple[str, ...]
    write_key: str
    read_key: str
    min_update_interval: float = DEFAULT_MIN_INTERVAL

    def to_json(self) -> dict:
        return {
            "id": self.channel_id,
            "kind": self.kind,
            "fields": list(self.field_names),
            "write_key": self.write_key,
            "read_key": self.read_key,
            "min_update_interval": self.min_update_interval,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> ChannelInfo:
        return cls(
            int(doc["id"]),
            doc["kind"],
            tuple(doc["fields"]),
            doc["write_key"],
            doc["read_key"],
            float(doc["min_update_interval"]),
        )


@dataclass
class DataChannel:
    info: ChannelInfo
    entries: list[ChannelEntry] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def channel_id(self) -> int:
        return self.info.channel_id

    def field_index(self, name: int | str) -> int:
        if isinstance(name, int):
            index = name
        elif name.startswith("field") and name[5:].isdigit():
            index = int(name[5:])
        elif name in self.info.field_names:
            index = self.info.field_names.index(name) + 1
        else:
            raise BrokerError(f"channel {self.channel_id} has no field {name!r}")
        if not 1 <= index <= len(self.info.field_names):
            raise BrokerError(
                f"field {index} out of range for channel {self.channel_id} "
                f"({len(self.info.field_names)} fields)"
            )
        return index

    def normalise(self, values: FieldValues) -> tuple[float | None, ...]:
        out: list[float | None] = [None] * len(self.info.field_names)
        if isinstance(values, Mapping):
            items = [(self.field_index(k), v) for k, v in values.items()]
        else:
            if len(values) > len(out):
                raise BrokerError(f"{len(values)} values for {len(out)} fields")
            items = [(n, v) for n, v in enumerate(values, start=1)]
        for index, value in items:
            if value is None:
                continue
            value = float(value)
            if not math.isfinite(value):
                raise BrokerError(f"field {index} is not finite")
            out[index - 1] = value
        return tuple(out)


def _new_key() -> str:
    return secrets.token_hex(8).upper()


def _format_value(value: float | None) -> str:
    return "" if value is None else repr(value)


class Broker:
    """Channel store; ``journal_dir`` enables append-only per-channel journals.

    With ``clock="sim"`` writes carry their own timestamp; with ``clock="wall"``
    the broker stamps entries with the current Unix time and ignores the
    caller's.
    """

    def __init__(self, journal_dir: str | Path | None = None, clock: str = "sim"):
        if clock not in ("sim", "wall"):
            raise ValueError(f"clock must be 'sim' or 'wall', got {clock!r}")
        self.clock = clock
        self.journal_dir = Path(journal_dir) if journal_dir is not None else None
        self._channels: dict[int, DataChannel] = {}
        self._keys: dict[str, tuple[int, str]] = {}
        self._lock = threading.Lock()
        self._next_id = 1
        if self.journal_dir is not None:
            self.journal_dir.mkdir(parents=True, exist_ok=True)
            self._replay()

    # provisioning ----------------------------------------------------------

    def create_channel(
        self,
        kind: str,
        field_names: Sequence[str],
        min_update_interval: float = DEFAULT_MIN_INTERVAL,
    ) -> ChannelInfo:
        if kind not in CHANNEL_KINDS:
            raise BrokerError(f"kind must be one of {CHANNEL_KINDS}, got {kind!r}")
        names = tuple(field_names)
        if not 1 <= len(names) <= MAX_FIELDS:
            raise BrokerError(f"a channel needs 1 to {MAX_FIELDS} fields, got {len(names)}")
        if len(set(names)) != len(names):
            raise BrokerError("field names must be distinct")
        if min_update_interval < 0:
            raise BrokerError("min_update_interval must be >= 0")
        with self._lock:
            write_key, read_key = _new_key(), _new_key()
            while write_key in self._keys or read_key in self._keys or write_key == read_key:
                write_key, read_key = _new_key(), _new_key()
            info = ChannelInfo(self._next_id, kind, names, write_key, read_key, float(min_update_interval))
            self._next_id += 1
            self._install(DataChannel(info))
            if self.journal_dir is not None:
                (self.journal_dir / f"{info.channel_id}.json").write_text(json.dumps(info.to_json()))
                (self.journal_dir / f"{info.channel_id}.tsv").touch()
        return info

    def _install(self, channel: DataChannel) -> None:
        info = channel.info
        self._channels[info.channel_id] = channel
        self._keys[info.write_key] = (info.channel_id, "write")
        self._keys[info.read_key] = (info.channel_id, "read")

    def channel(self, channel_id: int) -> DataChannel:
        try:
            return self._channels[int(channel_id)]
        except (KeyError, ValueError):
            raise ChannelNotFound(f"no channel {channel_id}") from None

    def channel_ids(self) -> list[int]:
        return sorted(self._channels)

    # auth ------------------------------------------------------------------

    def _authorise(self, channel_id: int, key: str, write: bool) -> DataChannel:
        channel = self.channel(channel_id)
        info = channel.info
        if write and key != info.write_key:
            raise AuthError(f"key is not the write key of channel {channel_id}")
        if not write and key not in (info.read_key, info.write_key):
            raise AuthError(f"key does not grant read access to channel {channel_id}")
        return channel

    def channel_for_write_key(self, key: str) -> int:
        owner = self._keys.get(key)
        if owner is None or owner[1] != "write":
            raise AuthError("unknown write key")
        return owner[0]

    # data path ---------------------------------------------------------------

    def write(
        self,
        channel_id: int,
        key: str,
        values: FieldValues,
        timestamp: float | None = None,
    ) -> int:
        """Append an entry; returns its entry id.

        Raises:
            AuthError: ``key`` is not this channel's write key.
            RateLimitError: closer than ``min_update_interval`` to the last
                accepted entry, or not after it.
            BrokerError: malformed fields or timestamp.
        """
        channel = self._authorise(channel_id, key, write=True)
        fields = channel.normalise(values)
        with channel.lock:
            ts = self._stamp(timestamp)
            if channel.entries:
                last = channel.entries[-1].timestamp
                if ts <= last or ts < last + channel.info.min_update_interval:
                    raise RateLimitError(
                        f"channel {channel_id}: write at t={ts} within "
                        f"{channel.info.min_update_interval} s of t={last}"
                    )
            entry = ChannelEntry(len(channel.entries) + 1, ts, fields)
            if self.journal_dir is not None:
                self._journal(channel.channel_id, entry)
            channel.entries.append(entry)
        return entry.entry_id

    def _stamp(self, timestamp: float | None) -> int:
        if self.clock == "wall":
            return int(time.time())
        if timestamp is None:
            raise BrokerError("simulation clock needs an explicit timestamp")
        ts = float(timestamp)
        if not math.isfinite(ts) or not ts.is_integer():
            raise BrokerError(f"timestamps are integer seconds, got {timestamp!r}")
        return int(ts)

    def read_latest(self, channel_id: int, key: str) -> ChannelEntry | None:
        channel = self._authorise(channel_id, key, write=False)
        entries = channel.entries
        return entries[-1] if entries else None

    def read_range(self, channel_id: int, key: str, t0: float, t1: float) -> list[ChannelEntry]:
        if t0 > t1:
            raise BrokerError(f"empty time range: start {t0} > end {t1}")
        channel = self._authorise(channel_id, key, write=False)
        snapshot = list(channel.entries)
        return [e for e in snapshot if t0 <= e.timestamp <= t1]

    # journal -----------------------------------------------------------------

    def _journal(self, channel_id: int, entry: ChannelEntry) -> None:
        assert self.journal_dir is not None
        cols = [str(entry.entry_id), str(entry.timestamp), *map(_format_value, entry.fields)]
        with open(self.journal_dir / f"{channel_id}.tsv", "a") as fh:
            fh.write("\t".join(cols) + "\n")

    def _replay(self) -> None:
        assert self.journal_dir is not None
        for meta in sorted(self.journal_dir.glob("*.json"), key=lambda p: int(p.stem)):
            info = ChannelInfo.from_json(json.loads(meta.read_text()))
            channel = DataChannel(info)
            journal = meta.with_suffix(".tsv")
            if journal.exists():
                for line in journal.read_text().splitlines():
                    if not line:
                        continue
                    cols = line.split("\t")
                    values = tuple(float(c) if c else None for c in cols[2:])
                    channel.entries.append(ChannelEntry(int(cols[0]), int(cols[1]), values))
            self._install(channel)
            self._next_id = max(self._next_id, info.channel_id + 1)
        if self._channels:
            log.info("replayed %d channels from %s", len(self._channels), self.journal_dir)
