from typing import List

import typer

from aioguiprobe.app.app_main import app as app_app
from aioguiprobe.coordinator.coordinator_main import app as coordinator_app
from aioguiprobe.harness.harness_main import app as harness_app
from aioguiprobe.util import setup_logging


app = typer.Typer()

nested_apps: List[typer.Typer] = [
    app_app,
    harness_app,
    coordinator_app,
]

# Every verb lives at the top level
for nested_app in nested_apps:
    app.registered_commands.extend(nested_app.registered_commands)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")) -> None:
    setup_logging(verbose)
