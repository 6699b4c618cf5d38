"""Simulation traces: records, CSV export/import, and summary metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from picogrid.entity import (
    CURRENT_SENSORS,
    VOLTAGE_SENSORS,
    Measurement,
    OperatingPoint,
    Setpoints,
    SwitchVector,
)
from picogrid.network import NetworkSolution

SWITCH_COLUMNS = ("u_pv", "u_as", "u_im", "u_l1", "u_l2", "u_l3", "u_ex")
POWER_COLUMNS = (
    "p_source",
    "p_import",
    "p_load",
    "p_export",
    "p_charge",
    "p_discharge",
    "loss_conditioning",
    "loss_boost",
)
THRESHOLD_COLUMNS = ("thr_l1", "thr_l2", "thr_l3", "thr_import", "thr_export")
BOARD_COLUMNS = (
    "t",
    "soc",
    "soc_end",
    "clamped",
    *SWITCH_COLUMNS,
    *VOLTAGE_SENSORS,
    *CURRENT_SENSORS,
    *POWER_COLUMNS,
    *THRESHOLD_COLUMNS,
)
MANIFEST = "manifest.json"

# channel -> (voltage sensor, current sensor)
ENERGY_CHANNELS = {
    "pv": ("v_pv", "i_pv"),
    "aux": ("v_as", "i_as"),
    "import": ("v_im", "i_im"),
    "load1": ("v_bo", "i_l1"),
    "load2": ("v_bo", "i_l2"),
    "load3": ("v_bo", "i_l3"),
    "export": ("v_bo", "i_ex"),
}


@dataclass(frozen=True)
class BoardRecord:
    soc: float
    soc_end: float
    switches: SwitchVector
    measurement: Measurement
    point: OperatingPoint
    setpoints: Setpoints
    clamped: bool = False


@dataclass(frozen=True)
class TraceRecord:
    t: float
    boards: dict[str, BoardRecord]
    network: NetworkSolution


@dataclass
class Trace:
    name: str
    tick: float
    board_ids: tuple[str, ...]
    network_ids: tuple[str, ...] = ()
    capacities: dict[str, float] = field(default_factory=dict)
    references: dict[str, dict[str, float]] = field(default_factory=dict)
    records: list[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, board: str, name: str) -> list[float]:
        return [_board_row(r.t, r.boards[board])[name] for r in self.records]


def _fmt(value: float | bool) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(float(value))


def _board_row(t: float, rec: BoardRecord) -> dict[str, float]:
    p = rec.point
    row: dict[str, float] = {"t": t, "soc": rec.soc, "soc_end": rec.soc_end, "clamped": float(rec.clamped)}
    row.update(zip(SWITCH_COLUMNS, rec.switches.as_tuple()))
    row.update(zip(VOLTAGE_SENSORS, rec.measurement.v))
    row.update(zip(CURRENT_SENSORS, rec.measurement.i))
    row.update(
        zip(
            POWER_COLUMNS,
            (
                p.source_power,
                p.import_power,
                p.load_power,
                p.export_power,
                p.charge_power,
                p.discharge_power,
                p.conditioning_loss,
                p.boost_loss,
            ),
        )
    )
    row.update(zip(THRESHOLD_COLUMNS, rec.setpoints.as_fields()))
    return row


def network_columns(network_ids: tuple[str, ...]) -> list[str]:
    cols = ["t", "v_bus", "curtailed", "line_loss", "kcl_residual"]
    for b in network_ids:
        cols += [f"i_export_{b}", f"i_import_{b}", f"v_term_{b}"]
    return cols


def export_csv(trace: Trace, path: str | Path) -> list[Path]:
    """Write ``<board>.csv`` per board, ``network.csv``, and a manifest.

    Floats are written with ``repr`` so a re-read reproduces them exactly.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for board in trace.board_ids:
        target = out / f"{board}.csv"
        with open(target, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(BOARD_COLUMNS)
            for rec in trace.records:
                row = _board_row(rec.t, rec.boards[board])
                writer.writerow(_fmt(row[c]) for c in BOARD_COLUMNS)
        written.append(target)

    target = out / "network.csv"
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(network_columns(trace.network_ids))
        for rec in trace.records:
            n = rec.network
            row = [_fmt(rec.t), _fmt(n.v_bus), _fmt(n.curtailed), _fmt(n.line_loss), _fmt(n.kcl_residual)]
            for b in trace.network_ids:
                row += [
                    _fmt(n.export_current.get(b, 0.0)),
                    _fmt(n.import_current.get(b, 0.0)),
                    _fmt(n.terminal_voltage.get(b, n.v_bus)),
                ]
            writer.writerow(row)
    written.append(target)

    manifest = {
        "name": trace.name,
        "tick": trace.tick,
        "boards": list(trace.board_ids),
        "network": list(trace.network_ids),
        "capacities": trace.capacities,
        "references": trace.references,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written


def read_trace(path: str | Path) -> Trace:
    """Load a trace directory written by :func:`export_csv`."""
    root = Path(path)
    manifest = json.loads((root / MANIFEST).read_text())
    trace = Trace(
        name=manifest["name"],
        tick=float(manifest["tick"]),
        board_ids=tuple(manifest["boards"]),
        network_ids=tuple(manifest["network"]),
        capacities={k: float(v) for k, v in manifest["capacities"].items()},
        references=manifest["references"],
    )
    per_board: dict[str, list[dict[str, str]]] = {}
    for board in trace.board_ids:
        with open(root / f"{board}.csv", newline="") as fh:
            per_board[board] = list(csv.DictReader(fh))
    with open(root / "network.csv", newline="") as fh:
        net_rows = list(csv.DictReader(fh))
    for k, net in enumerate(net_rows):
        boards = {}
        for board in trace.board_ids:
            row = {c: float(v) for c, v in per_board[board][k].items()}
            u = [row[c] for c in SWITCH_COLUMNS]
            boards[board] = BoardRecord(
                soc=row["soc"],
                soc_end=row["soc_end"],
                switches=SwitchVector(u[0], u[1], bool(u[2]), u[3], u[4], u[5], bool(u[6])),
                measurement=Measurement(
                    tuple(row[c] for c in VOLTAGE_SENSORS), tuple(row[c] for c in CURRENT_SENSORS), row["t"]
                ),
                point=OperatingPoint(
                    source_power=row["p_source"],
                    import_power=row["p_import"],
                    load_power=row["p_load"],
                    export_power=row["p_export"],
                    charge_power=row["p_charge"],
                    discharge_power=row["p_discharge"],
                    conditioning_loss=row["loss_conditioning"],
                    boost_loss=row["loss_boost"],
                ),
                setpoints=Setpoints(
                    tuple(row[c] for c in THRESHOLD_COLUMNS[:3]), row["thr_import"], row["thr_export"]
                ),
                clamped=bool(row["clamped"]),
            )
        network = NetworkSolution(
            v_bus=float(net["v_bus"]),
            export_current={b: float(net[f"i_export_{b}"]) for b in trace.network_ids},
            import_current={b: float(net[f"i_import_{b}"]) for b in trace.network_ids},
            terminal_voltage={b: float(net[f"v_term_{b}"]) for b in trace.network_ids},
            line_loss=float(net["line_loss"]),
            curtailed=bool(float(net["curtailed"])),
        )
        trace.records.append(TraceRecord(float(net["t"]), boards, network))
    return trace


def energy_residual(record: TraceRecord, capacities: dict[str, float], tick: float) -> float:
    """Stored-energy change minus (sources - loads - losses) over one tick.

    Uses line losses from the network solution rather than the import/export
    powers, so a nonzero value also exposes network-side imbalance.
    """
    stored = 0.0
    flow = 0.0
    for board, rec in record.boards.items():
        stored += capacities[board] * (rec.soc_end - rec.soc) / 100.0
        p = rec.point
        flow += p.source_power - p.load_power - p.conditioning_loss - p.boost_loss
    flow -= record.network.line_loss
    return stored - flow * tick / 3600.0


def summarize(trace: Trace, references: dict[str, dict[str, float]] | None = None) -> dict:
    """Energy per channel from sensed power, errors against analytic references,
    SOC range per board, and network exchange totals."""
    if not trace.records:
        raise ValueError("cannot summarize an empty trace")
    references = trace.references if references is None else references
    hours = trace.tick / 3600.0
    channels: dict[str, dict[str, dict[str, float | None]]] = {}
    soc: dict[str, dict[str, float]] = {}
    for board in trace.board_ids:
        sensed = {name: 0.0 for name in ENERGY_CHANNELS}
        lo, hi = math.inf, -math.inf
        for rec in trace.records:
            b = rec.boards[board]
            m = b.measurement.as_dict()
            for name, (v, i) in ENERGY_CHANNELS.items():
                sensed[name] += m[v] * m[i] * hours
            lo = min(lo, b.soc, b.soc_end)
            hi = max(hi, b.soc, b.soc_end)
        soc[board] = {"min": lo, "max": hi}
        refs = references.get(board, {})
        channels[board] = {}
        for name, energy in sensed.items():
            analytic = refs.get(name)
            if analytic is None:
                error = None
            elif analytic == 0:
                error = 0.0 if energy == 0 else math.inf
            else:
                error = 100.0 * (energy - analytic) / analytic
            channels[board][name] = {"simulated": energy, "analytic": analytic, "error_pct": error}
    exchanged = sum(r.network.v_bus * r.network.delivered for r in trace.records) * hours
    losses = sum(r.network.line_loss for r in trace.records) * hours
    return {
        "scenario": trace.name,
        "ticks": len(trace.records),
        "channels": channels,
        "soc": soc,
        "network": {"exchanged_energy": exchanged, "line_loss_energy": losses},
    }
