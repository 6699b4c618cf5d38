"""Command line entry point: ``picogrid run|summarize|plot|broker``."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from picogrid.broker.core import BrokerError
from picogrid.engine import ConfigError, load_scenario, run_scenario
from picogrid.network import SwitchViolation
from picogrid.remote import ControlLoopError
from picogrid.trace import export_csv, read_trace, summarize


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging.")
def main(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("scenario")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Trace directory (default: ./out/<scenario name>).")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--live-broker", "broker_url", default=None, help="Use an HTTP broker at this URL.")
@click.option("--pace", type=click.Choice(["real", "fast"]), default="fast", show_default=True)
def run(scenario: str, out_dir: str | None, seed: int | None, broker_url: str | None, pace: str) -> None:
    """Run SCENARIO (a file path, or exp1 / exp2 / exp3) and write its trace."""
    try:
        config = load_scenario(scenario)
        if seed is not None:
            config = replace(config, seed=seed)
        broker = None
        if broker_url:
            from picogrid.broker.http import HttpBroker

            broker = HttpBroker(broker_url)
        trace = run_scenario(config, broker=broker, pace=pace)
    except SwitchViolation as exc:
        raise click.ClickException(f"aborted: {exc}") from exc
    except (ConfigError, BrokerError, ControlLoopError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    target = Path(out_dir) if out_dir else Path("out") / config.name
    files = export_csv(trace, target)
    click.echo(f"{config.name}: {len(trace)} ticks -> {target} ({len(files)} csv files)")


@main.command("summarize")
@click.argument("trace_dir", type=click.Path(exists=True, file_okay=False))
def summarize_cmd(trace_dir: str) -> None:
    """Print energy and SOC metrics of TRACE_DIR as JSON."""
    trace = read_trace(trace_dir)
    if not trace.records:
        raise click.ClickException("trace is empty")
    json.dump(summarize(trace), sys.stdout, indent=2, sort_keys=True)
    click.echo()


@main.command()
@click.argument("trace_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Image directory (default: TRACE_DIR).")
def plot(trace_dir: str, out_dir: str | None) -> None:
    """Write soc.png, loads.png and exchange.png for TRACE_DIR."""
    from picogrid.plotting import plot_trace

    for path in plot_trace(read_trace(trace_dir), out_dir or trace_dir):
        click.echo(str(path))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--clock", type=click.Choice(["sim", "wall"]), default="sim", show_default=True,
              help="sim: trust created_at; wall: stamp entries with server time.")
@click.option("--journal", type=click.Path(file_okay=False), default=None)
@click.option("--admin-key", default=None, help="Require this key to create channels.")
def broker(host: str, port: int, clock: str, journal: str | None, admin_key: str | None) -> None:
    """Serve the data-channel broker over HTTP."""
    from picogrid.broker.http import serve

    serve(host=host, port=port, clock=clock, journal_dir=journal, admin_key=admin_key)


if __name__ == "__main__":
    main()
