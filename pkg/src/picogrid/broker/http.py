"""HTTP wire interface for the broker, plus a client with the in-process API.

Endpoints::

    POST /update?api_key=K&field1=..&field8=..[&created_at=T][&channel_id=N]
    GET  /channels/{id}/feeds/last?api_key=K
    GET  /channels/{id}/feeds?api_key=K[&start=T0][&end=T1]
    POST /channels                      (JSON body; admin)

Errors come back as ``{"error": <reason>, "detail": <text>}`` with status
400, 401, 404 or 429.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import httpx
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse

from picogrid.broker.core import (
    DEFAULT_MIN_INTERVAL,
    MAX_FIELDS,
    AuthError,
    Broker,
    BrokerError,
    ChannelEntry,
    ChannelInfo,
    ChannelNotFound,
    FieldValues,
    RateLimitError,
)

_ERRORS = {cls.reason: cls for cls in (BrokerError, AuthError, RateLimitError, ChannelNotFound)}
_EMPTY = "empty"


def _error(exc: BrokerError) -> JSONResponse:
    return JSONResponse({"error": exc.reason, "detail": str(exc)}, status_code=exc.status)


def _number(raw: str, name: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise BrokerError(f"{name} is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise BrokerError(f"{name} is not finite")
    return value


def create_app(broker: Broker | None = None, admin_key: str | None = None) -> FastAPI:
    """FastAPI application serving ``broker`` (a fresh one if omitted)."""
    broker = broker if broker is not None else Broker()
    app = FastAPI(title="picogrid broker")
    app.state.broker = broker

    @app.exception_handler(BrokerError)
    async def _broker_error(request: Request, exc: BrokerError) -> JSONResponse:
        return _error(exc)

    @app.post("/update")
    def update(request: Request) -> dict:
        params = request.query_params
        key = params.get("api_key")
        if not key:
            raise AuthError("api_key is required")
        channel_id = broker.channel_for_write_key(key)
        if "channel_id" in params and params["channel_id"] != str(channel_id):
            raise AuthError(f"key is not the write key of channel {params['channel_id']}")
        values: dict[int, float] = {}
        for name, raw in params.items():
            if name.startswith("field"):
                index = name[5:]
                if not index.isdigit() or not 1 <= int(index) <= MAX_FIELDS:
                    raise BrokerError(f"unknown parameter {name}")
                if raw != "":
                    values[int(index)] = _number(raw, name)
        created_at = params.get("created_at")
        timestamp = _number(created_at, "created_at") if created_at is not None else None
        entry_id = broker.write(channel_id, key, values, timestamp)
        return {"channel_id": channel_id, "entry_id": entry_id}

    @app.get("/channels/{channel_id}/feeds/last")
    def feeds_last(channel_id: int, api_key: str = ""):
        entry = broker.read_latest(channel_id, api_key)
        if entry is None:
            return JSONResponse(
                {"error": _EMPTY, "detail": f"channel {channel_id} has no entries"}, status_code=404
            )
        return entry.to_json()

    @app.get("/channels/{channel_id}/feeds")
    def feeds(channel_id: int, api_key: str = "", start: float = -math.inf, end: float = math.inf):
        return [e.to_json() for e in broker.read_range(channel_id, api_key, start, end)]

    @app.post("/channels")
    def create(
        body: dict = Body(...),
        api_key: str = "",
    ) -> dict:
        if admin_key is not None and api_key != admin_key:
            raise AuthError("admin key required")
        try:
            kind = body["kind"]
            fields = body["fields"]
        except (KeyError, TypeError):
            raise BrokerError("body needs 'kind' and 'fields'") from None
        interval = body.get("min_update_interval", DEFAULT_MIN_INTERVAL)
        return broker.create_channel(kind, fields, interval).to_json()

    return app


def _raise_for(response: httpx.Response) -> None:
    if response.status_code == 200:
        return
    try:
        doc = response.json()
        reason, detail = doc.get("error", ""), doc.get("detail", response.text)
    except ValueError:
        reason, detail = "", response.text
    cls = _ERRORS.get(reason)
    if cls is None:
        cls = {401: AuthError, 404: ChannelNotFound, 429: RateLimitError}.get(response.status_code, BrokerError)
    raise cls(detail)


class HttpBroker:
    """Client speaking the wire protocol; same methods as :class:`Broker`.

    ``client`` may be any ``httpx.Client`` (a FastAPI ``TestClient`` works).
    """

    def __init__(
        self,
        base_url: str | None = None,
        client: httpx.Client | None = None,
        admin_key: str | None = None,
        timeout: float = 10.0,
    ):
        if client is None:
            if base_url is None:
                raise ValueError("need a base_url or a client")
            client = httpx.Client(base_url=base_url, timeout=timeout)
        self._client = client
        self._admin_key = admin_key

    def close(self) -> None:
        self._client.close()

    def create_channel(
        self,
        kind: str,
        field_names: Sequence[str],
        min_update_interval: float = DEFAULT_MIN_INTERVAL,
    ) -> ChannelInfo:
        params = {"api_key": self._admin_key} if self._admin_key else {}
        body = {"kind": kind, "fields": list(field_names), "min_update_interval": min_update_interval}
        response = self._client.post("/channels", params=params, json=body)
        _raise_for(response)
        return ChannelInfo.from_json(response.json())

    def write(
        self,
        channel_id: int,
        key: str,
        values: FieldValues,
        timestamp: float | None = None,
    ) -> int:
        params: dict[str, str] = {"api_key": key, "channel_id": str(channel_id)}
        if isinstance(values, Mapping):
            items = values.items()
        else:
            items = enumerate(values, start=1)
        for name, value in items:
            if value is None:
                continue
            label = name if isinstance(name, str) and name.startswith("field") else None
            if label is None and isinstance(name, int):
                label = f"field{name}"
            if label is None:
                raise BrokerError(f"HTTP writes address fields by number, got {name!r}")
            params[label] = repr(float(value))
        if timestamp is not None:
            params["created_at"] = repr(timestamp)
        response = self._client.post("/update", params=params)
        _raise_for(response)
        return int(response.json()["entry_id"])

    def read_latest(self, channel_id: int, key: str) -> ChannelEntry | None:
        response = self._client.get(f"/channels/{channel_id}/feeds/last", params={"api_key": key})
        if response.status_code == 404 and response.json().get("error") == _EMPTY:
            return None
        _raise_for(response)
        return ChannelEntry.from_json(response.json())

    def read_range(self, channel_id: int, key: str, t0: float, t1: float) -> list[ChannelEntry]:
        if t0 > t1:
            raise BrokerError(f"empty time range: start {t0} > end {t1}")
        params = {"api_key": key, "start": repr(float(t0)), "end": repr(float(t1))}
        response = self._client.get(f"/channels/{channel_id}/feeds", params=params)
        _raise_for(response)
        return [ChannelEntry.from_json(doc) for doc in response.json()]


def serve(
    host: str = "127.0.0.1",
    port: int = 8080,
    clock: str = "sim",
    journal_dir: str | None = None,
    admin_key: str | None = None,
) -> None:
    import uvicorn

    app = create_app(Broker(journal_dir=journal_dir, clock=clock), admin_key=admin_key)
    uvicorn.run(app, host=host, port=port, log_level="info")
