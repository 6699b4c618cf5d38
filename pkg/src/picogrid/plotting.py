"""Static plots of a trace directory: SOC, load currents, exchange currents."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from picogrid.trace import Trace  # noqa: E402


def plot_trace(trace: Trace, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    minutes = [r.t / 60.0 for r in trace.records]
    written = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for board in trace.board_ids:
        ax.plot(minutes, trace.column(board, "soc"), label=f"{board} soc")
        thresholds = trace.column(board, "thr_l1")
        if any(0 <= x <= 100 for x in thresholds):
            for col in ("thr_l1", "thr_l2", "thr_l3"):
                ax.plot(minutes, trace.column(board, col), ls="--", lw=0.8, label=f"{board} {col}")
    ax.set_xlabel("time [min]")
    ax.set_ylabel("soc [%]")
    ax.legend(fontsize=7)
    written.append(_save(fig, out / "soc.png"))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for board in trace.board_ids:
        for col in ("i_l1", "i_l2", "i_l3"):
            values = trace.column(board, col)
            if any(values):
                ax.step(minutes, values, where="post", label=f"{board} {col}")
    ax.set_xlabel("time [min]")
    ax.set_ylabel("load current [pu]")
    ax.legend(fontsize=7)
    written.append(_save(fig, out / "loads.png"))

    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for board in trace.network_ids:
        top.step(minutes, [r.network.import_current.get(board, 0.0) for r in trace.records],
                 where="post", label=board)
        bottom.step(minutes, [r.network.export_current.get(board, 0.0) for r in trace.records],
                    where="post", label=board)
    top.set_ylabel("import [pu]")
    bottom.set_ylabel("export [pu]")
    bottom.set_xlabel("time [min]")
    if trace.network_ids:
        top.legend(fontsize=7)
    written.append(_save(fig, out / "exchange.png"))
    return written


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
