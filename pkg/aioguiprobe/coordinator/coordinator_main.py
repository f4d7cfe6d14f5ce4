from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from yarl import URL

from aioguiprobe.app.app_generator import resolve_app
from aioguiprobe.coordinator.session import ActionCounter, DeviceSession, training_session
from aioguiprobe.coordinator.worker import DEFAULT_URL, RemoteWorkerClient, Worker, WorkerServer
from aioguiprobe.encoder import EncoderConfig, GuiEncoder
from aioguiprobe.learner.trainer import MetricsLog, ModelStorage, Trainer, TrainerConfig
from aioguiprobe.util import async_command, parse_interval, timer


app = typer.Typer()
console = Console()


@async_command(app, "serve")
async def serve_main(
    app_ref: str = typer.Argument("diary_toy", metavar="APP", help="App model file, bundled fixture or synthetic app"),
    url: str = typer.Option(str(DEFAULT_URL), "--url", "-u", help="tcp://HOST:PORT to bind to"),
    checkpoint: Path = typer.Option(Path("checkpoint.gpqn"), "--checkpoint", "-m", help="Where models are published"),
    metrics: Optional[Path] = typer.Option(None, "--metrics", help="Training metrics CSV"),
    seed: int = typer.Option(0, "--seed", "-s"),
    steps: Optional[int] = typer.Option(None, "--steps", help="Stop after this many optimizer steps"),
    seconds: Optional[float] = typer.Option(None, "--time", "-t", parser=parse_interval, help="Stop after this long"),
    min_fill: int = typer.Option(TrainerConfig.min_fill, "--min-fill"),
) -> None:
    """Runs the worker and trainer; devices connect with `device`"""
    model = resolve_app(app_ref)
    cfg = TrainerConfig(min_fill=min_fill)
    encoder_cfg = EncoderConfig()
    storage = ModelStorage(encoder_cfg, checkpoint, meta={"app_fingerprint": model.fingerprint})
    encoder = GuiEncoder(encoder_cfg, model.function_table)
    trainer = Trainer(cfg, encoder, storage, seed=seed, metrics=MetricsLog(metrics))
    worker = Worker(model, encoder, storage, trainer)
    deadline = timer() + seconds if seconds is not None else None

    async with WorkerServer(worker, URL(url)) as server:
        console.print(f"Waiting for devices on {server.url} (app {model.name}, {model.fingerprint})")
        try:
            await trainer.run(max_steps=steps, deadline=deadline)
        finally:
            trainer.finish()
            console.print(
                f"Trained {trainer.steps} steps from {len(trainer.received)} sequences, model v{storage.version}"
            )


@async_command(app, "device")
async def device_main(
    app_ref: str = typer.Argument("diary_toy", metavar="APP", help="Same app the server runs"),
    url: str = typer.Option(str(DEFAULT_URL), "--url", "-u", help="tcp://HOST:PORT of the worker"),
    session_id: str = typer.Option("device-0", "--session", help="Session id, unique per device"),
    seed: int = typer.Option(0, "--seed", "-s"),
    actions: Optional[int] = typer.Option(None, "--actions", help="Stop after this many actions"),
) -> None:
    """Simulated device exploring the app for a remote trainer"""
    model = resolve_app(app_ref)
    client = RemoteWorkerClient(URL(url), session_id)
    session = DeviceSession.start(session_id, model, client, seed)
    try:
        submitted = await training_session(session, TrainerConfig(), ActionCounter(), max_actions=actions)
    finally:
        await client.close()
    console.print(
        f"{session_id}: {session.actions} actions, {len(submitted)} sequences, model v{session.model_version}"
    )
