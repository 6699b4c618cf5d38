"""Data-channel broker emulating the cloud dashboard."""

from picogrid.broker.core import (
    DEFAULT_MIN_INTERVAL,
    MAX_FIELDS,
    AuthError,
    Broker,
    BrokerError,
    ChannelEntry,
    ChannelInfo,
    ChannelNotFound,
    DataChannel,
    RateLimitError,
)

__all__ = [
    "DEFAULT_MIN_INTERVAL",
    "MAX_FIELDS",
    "AuthError",
    "Broker",
    "BrokerError",
    "ChannelEntry",
    "ChannelInfo",
    "ChannelNotFound",
    "DataChannel",
    "RateLimitError",
]
