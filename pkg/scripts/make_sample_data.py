"""Regenerate the bundled synthetic daily profiles in src/picogrid/data.

Shapes are PV-, refrigerator-, and kitchen-like; peaks are pinned so that a
1 pu source (2.5 W) and 0.37 pu loads (0.925 W) give rating-to-peak ratios of
1.4e-3, 2.7e-3 and 3.6e-3.
"""

from __future__ import annotations

import math
from datetime import datetime, timedelta
from pathlib import Path

N = 96
STEP = timedelta(minutes=15)
START = datetime(2019, 7, 1)
PEAKS = {"pv": 1786.0, "refrigerator": 342.6, "kitchen": 256.9}


def pv(i: int) -> float:
    h = i / 4
    if not 6.0 < h < 20.0:
        return 0.0
    clear = math.sin(math.pi * (h - 6.0) / 14.0) ** 1.5
    cloud = 1.0 - 0.3 * math.exp(-(((h - 15.5) / 0.6) ** 2))
    return clear * cloud


def refrigerator(i: int) -> float:
    if i == 58:  # defrost heater
        return 1.0
    cycle = 120.0 + 15.0 * math.sin(0.7 * i) if i % 5 in (0, 1) else 6.0
    return cycle / PEAKS["refrigerator"]


def kitchen(i: int) -> float:
    h = i / 4
    meals = ((7.5, 0.5, 0.55), (12.5, 0.4, 0.45), (18.5, 0.7, 1.0))
    base = 3.0 / PEAKS["kitchen"]
    return base + sum(a * math.exp(-(((h - c) / w) ** 2)) for c, w, a in meals)


def write(name: str, shape) -> None:
    raw = [shape(i) for i in range(N)]
    top = max(raw)
    values = [round(PEAKS[name] * v / top, 1) for v in raw]
    out = Path(__file__).resolve().parents[1] / "src" / "picogrid" / "data" / f"{name}.csv"
    lines = ["timestamp,power_w"]
    lines += [f"{(START + k * STEP).isoformat()},{v:.1f}" for k, v in enumerate(values)]
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    for name, shape in (("pv", pv), ("refrigerator", refrigerator), ("kitchen", kitchen)):
        write(name, shape)
