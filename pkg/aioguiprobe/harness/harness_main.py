from __future__ import annotations

from pathlib import Path
from typing import Any, List, Optional

import typer
from rich.console import Console
from rich.table import Table
from yarl import URL

from aioguiprobe.coordinator.session import Policy
from aioguiprobe.harness.experiment import (
    LISTENER_STUDY_REPEATS,
    ExperimentSpec,
    RunReport,
    cmd_baseline_random,
    cmd_commit_eval,
    cmd_evaluate,
    cmd_replay,
    cmd_report,
    cmd_train,
)
from aioguiprobe.util import RuntimeFailure, async_command, command, parse_interval


app = typer.Typer()
console = Console()


def build_spec(config: Optional[Path], **overrides: Any) -> ExperimentSpec:
    """--config JSON first, then every flag that was actually given"""
    base = ExperimentSpec.load(config) if config is not None else ExperimentSpec()
    data = base.to_dict()
    for key, value in overrides.items():
        if value is None or value == []:
            continue
        if key == "trainer":
            data["trainer"] = {**data["trainer"], **{k: v for k, v in value.items() if v is not None}}
        else:
            data[key] = value.value if isinstance(value, Policy) else value
    if overrides.get("targets") == "listener" and overrides.get("repeats") is None and config is None:
        data["repeats"] = LISTENER_STUDY_REPEATS
    return ExperimentSpec.from_dict(data)


def print_report(report: RunReport) -> None:
    table = Table(title=f"{report.command} {report.run_id}: {report.policy} on {report.app}")
    if report.commit_rows:
        for column in ("commit", "policy", "seed", "events", "censored"):
            table.add_column(column)
        for row in report.commit_rows:
            table.add_row(row.commit, row.policy, str(row.seed), str(row.events), "yes" if row.censored else "")
    else:
        for column in ("seed", "targets", "covered", "mean events", "success rate"):
            table.add_column(column, justify="right")
        for seed, t in report.totals.get("per_seed", {}).items():
            events = "N/A" if t["events_mean"] is None else f"{t['events_mean']:.1f}"
            rate = "N/A" if t["success_rate"] is None else f"{100 * t['success_rate']:.1f} %"
            table.add_row(seed, str(t["targets"]), str(t["covered"]), events, rate)
    console.print(table)


ConfigOption = typer.Option(None, "--config", "-c", exists=True, dir_okay=False, help="ExperimentSpec JSON file")
AppOption = typer.Option(None, "--app", "-a", help="App model file, bundled fixture or bundled synthetic app")
SeedOption = typer.Option(None, "--seed", "-s", help="Seed (repeat for several)")
OutOption = typer.Option(None, "--out", "-o", help="Directory that receives run directories")
ElasticOption = typer.Option(None, "--elastic", help="Mirrors run summaries to the specified ElasticSearch URL")


@async_command(app, "train")
async def train_main(
    config: Optional[Path] = ConfigOption,
    app_ref: Optional[str] = AppOption,
    seed: Optional[List[int]] = SeedOption,
    steps: Optional[int] = typer.Option(None, "--steps", help="Optimizer steps"),
    seconds: Optional[float] = typer.Option(
        None, "--time", "-t", parser=parse_interval, help="Wall-clock budget, e.g. 30m"
    ),
    actions: Optional[int] = typer.Option(None, "--actions", help="Actions per device"),
    devices: Optional[int] = typer.Option(None, "--devices", "-d", help="Simulated devices feeding the trainer"),
    min_fill: Optional[int] = typer.Option(None, "--min-fill", help="Buffer size before training starts"),
    out: Optional[str] = OutOption,
    elastic_url: Optional[str] = ElasticOption,
    progress: bool = typer.Option(True, help="Show a progress bar"),
) -> None:
    """Trains a goal-conditioned Q-network by exploring the app"""
    spec = build_spec(
        config, app=app_ref, seeds=seed, train_steps=steps, train_seconds=seconds, train_actions=actions,
        devices=devices, out=out, trainer={"min_fill": min_fill},
    )
    result = await cmd_train(spec, URL(elastic_url) if elastic_url else None, show_progress=progress)
    console.print(
        f"Trained [bold]{result.steps}[/] steps, model v{result.model_version}, "
        f"{result.sequences} sequences from {result.actions} actions"
    )
    console.print(f"Checkpoint: {result.checkpoint or 'none (no optimizer steps)'}")
    console.print(f"Run directory: {result.run_dir}")


def _evaluation_spec(
    config: Optional[Path],
    app_ref: Optional[str],
    seed: Optional[List[int]],
    budget: Optional[int],
    max_steps: Optional[int],
    targets: Optional[str],
    k: Optional[int],
    repeats: Optional[int],
    devices: Optional[int],
    epsilon: Optional[float],
    loop_escape: Optional[int],
    heat_scale: Optional[float],
    out: Optional[str],
    **extra: Any,
) -> ExperimentSpec:
    return build_spec(
        config, app=app_ref, seeds=seed, budget=budget, max_directed_steps=max_steps, targets=targets, target_k=k,
        repeats=repeats, devices=devices, epsilon=epsilon, loop_escape=loop_escape, heat_scale=heat_scale, out=out,
        **extra,
    )


BudgetOption = typer.Option(None, "--budget", "-b", help="Events per run")
MaxStepsOption = typer.Option(None, "--max-steps", help="Directed steps per target")
TargetsOption = typer.Option(None, "--targets", help="random_k, listener or changed:<set>")
KOption = typer.Option(None, "--k", "-k", help="Number of sampled targets")
RepeatsOption = typer.Option(None, "--repeats", "-r", help="Runs per seed (union coverage is reported)")
DevicesOption = typer.Option(None, "--devices", "-d", help="Devices sharing the targets round-robin")
EpsilonOption = typer.Option(None, "--epsilon", help="Random-action probability during directed runs")
LoopEscapeOption = typer.Option(None, "--loop-escape", help="Force a random action after this many identical states")
HeatScaleOption = typer.Option(None, "--heat-scale", help="Multiplier for the heat bucket edges")


@async_command(app, "evaluate")
async def evaluate_main(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-m", exists=True, dir_okay=False),
    policy: Optional[Policy] = typer.Option(None, "--policy", "-p"),
    config: Optional[Path] = ConfigOption,
    app_ref: Optional[str] = AppOption,
    seed: Optional[List[int]] = SeedOption,
    budget: Optional[int] = BudgetOption,
    max_steps: Optional[int] = MaxStepsOption,
    targets: Optional[str] = TargetsOption,
    k: Optional[int] = KOption,
    repeats: Optional[int] = RepeatsOption,
    devices: Optional[int] = DevicesOption,
    epsilon: Optional[float] = EpsilonOption,
    loop_escape: Optional[int] = LoopEscapeOption,
    heat_scale: Optional[float] = HeatScaleOption,
    out: Optional[str] = OutOption,
    elastic_url: Optional[str] = ElasticOption,
    progress: bool = typer.Option(True, help="Show a progress bar"),
) -> None:
    """Directed exploration toward sampled target functions"""
    spec = _evaluation_spec(
        config, app_ref, seed, budget, max_steps, targets, k, repeats, devices, epsilon, loop_escape, heat_scale, out,
        policy=policy,
    )
    elastic = URL(elastic_url) if elastic_url else None
    report = await cmd_evaluate(spec, checkpoint, elastic_url=elastic, show_progress=progress)
    print_report(report)


@async_command(app, "baseline")
async def baseline_main(
    config: Optional[Path] = ConfigOption,
    app_ref: Optional[str] = AppOption,
    seed: Optional[List[int]] = SeedOption,
    budget: Optional[int] = BudgetOption,
    max_steps: Optional[int] = MaxStepsOption,
    targets: Optional[str] = TargetsOption,
    k: Optional[int] = KOption,
    repeats: Optional[int] = RepeatsOption,
    devices: Optional[int] = DevicesOption,
    out: Optional[str] = OutOption,
    elastic_url: Optional[str] = ElasticOption,
    progress: bool = typer.Option(True, help="Show a progress bar"),
) -> None:
    """Uniform random walk with the same targets and budgets"""
    spec = _evaluation_spec(
        config, app_ref, seed, budget, max_steps, targets, k, repeats, devices, None, None, None, out
    )
    report = await cmd_baseline_random(spec, URL(elastic_url) if elastic_url else None, show_progress=progress)
    print_report(report)


@async_command(app, "commit-eval")
async def commit_eval_main(
    checkpoint: Optional[Path] = typer.Option(None, "--checkpoint", "-m", exists=True, dir_okay=False),
    policy: Optional[List[Policy]] = typer.Option(None, "--policy", "-p", help="Policy column (repeat for several)"),
    changed_set: Optional[List[str]] = typer.Option(None, "--set", help="Changed set (default: all)"),
    config: Optional[Path] = ConfigOption,
    app_ref: Optional[str] = AppOption,
    seed: Optional[List[int]] = SeedOption,
    budget: Optional[int] = BudgetOption,
    max_steps: Optional[int] = MaxStepsOption,
    epsilon: Optional[float] = EpsilonOption,
    loop_escape: Optional[int] = LoopEscapeOption,
    out: Optional[str] = OutOption,
    elastic_url: Optional[str] = ElasticOption,
) -> None:
    """Events needed to cover all functions of each changed set"""
    spec = build_spec(
        config, app=app_ref, seeds=seed, budget=budget, max_directed_steps=max_steps, epsilon=epsilon,
        loop_escape=loop_escape, out=out, policies=[p.value for p in policy or []], changed_sets=changed_set,
    )
    report = await cmd_commit_eval(spec, checkpoint, URL(elastic_url) if elastic_url else None)
    print_report(report)


@command(app, "report")
def report_main(
    run_dirs: List[Path] = typer.Argument(..., exists=True, file_okay=False, help="Run directories to merge"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Writes the markdown here as well"),
) -> None:
    """Merges runs into comparison tables"""
    console.print(cmd_report(run_dirs, out), markup=False)


@async_command(app, "replay")
async def replay_main(
    run_dir: Path = typer.Argument(..., exists=True, file_okay=False, help="Run directory holding a manifest"),
) -> None:
    """Re-executes a run from its manifest and compares the outputs byte for byte"""
    result = await cmd_replay(run_dir)
    if not result.identical:
        raise RuntimeFailure(f"Replay of {result.run_id} differs in {', '.join(result.differences)}")
    console.print(f"Replay of [bold]{result.run_id}[/] is identical")
