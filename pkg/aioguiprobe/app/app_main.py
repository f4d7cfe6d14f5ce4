from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from aioguiprobe.app.app_generator import BUNDLED_SYNTHETIC, GeneratorSpec, generate_synthetic_app
from aioguiprobe.app.app_model import AppModel, bfs_depth, dump_app_model, shortest_trigger_distance
from aioguiprobe.util import ValidationError, atomic_write, autocomplete, command


app = typer.Typer()
console = Console(stderr=True)


def print_app_stats(model: AppModel) -> None:
    table = model.function_table
    unreachable = [f for f in table.ids if shortest_trigger_distance(model, f) is None]
    listeners = sum(1 for f in table.ids if table.is_listener(f))
    stats = Table(title=f"{model.name} ({model.fingerprint})", show_header=False)
    stats.add_column(justify="right")
    stats.add_column()
    stats.add_row("screens", str(len(model.screens)))
    stats.add_row("transitions", str(len(model.transitions)))
    stats.add_row("BFS depth", str(bfs_depth(model)))
    stats.add_row("functions", str(len(table)))
    stats.add_row("listeners", str(listeners))
    stats.add_row("unreachable functions", str(len(unreachable)))
    stats.add_row("changed sets", ", ".join(sorted(table.changed_sets)) or "-")
    console.print(stats)


@command(app, "gen-app")
def gen_app_main(
    bundled: Optional[str] = typer.Option(
        None, "--bundled", autocompletion=autocomplete(BUNDLED_SYNTHETIC), help="Regenerates a bundled synthetic app"
    ),
    spec_file: Optional[Path] = typer.Option(None, "--spec", exists=True, dir_okay=False, help="GeneratorSpec JSON"),
    n_screens: int = typer.Option(50, "--screens"),
    n_functions: int = typer.Option(150, "--functions"),
    branching: int = typer.Option(4, "--branching"),
    noop_fraction: float = typer.Option(0.2, "--noop-fraction"),
    exit_fraction: float = typer.Option(0.02, "--exit-fraction"),
    seed: int = typer.Option(0, "--seed", "-s"),
    name: Optional[str] = typer.Option(None, "--name"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output file (default: stdout)"),
    stats: bool = typer.Option(False, "--stats", help="Prints a summary of the generated app"),
) -> None:
    """Generates a synthetic app model"""
    if bundled is not None:
        if bundled not in BUNDLED_SYNTHETIC:
            raise ValidationError(f"Unknown bundled app {bundled!r}, expected one of {', '.join(BUNDLED_SYNTHETIC)}")
        spec = BUNDLED_SYNTHETIC[bundled]
    elif spec_file is not None:
        spec = GeneratorSpec.load(spec_file)
    else:
        spec = GeneratorSpec(n_screens, n_functions, branching, noop_fraction, exit_fraction, seed, name=name)
    model = generate_synthetic_app(spec)
    text = dump_app_model(model)
    if out is None:
        typer.echo(text)
    else:
        atomic_write(out, text)
    if stats:
        print_app_stats(model)
