"""
Experiment runs: training, directed evaluation against sampled targets,
events-to-cover for changed sets, the random baseline, merged reports and
replays. Every run writes into its own directory named after its run id:

    manifest.json   everything needed to re-execute the run
    events.jsonl    every executed event
    report.json     RunReport (report.csv / report.md alongside)
    train.json, metrics.csv, heat.json, checkpoint.gpqn   training runs only
"""
from __future__ import annotations

import asyncio
import csv
import io
import json
import logging
import tempfile
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from aioguiprobe import __version__
from aioguiprobe.app.app_generator import GeneratorSpec, generate_synthetic_app, resolve_app
from aioguiprobe.app.app_model import AppModel
from aioguiprobe.checkpoint import Checkpoint, load_checkpoint
from aioguiprobe.coordinator.session import (
    ActionCounter,
    DeviceSession,
    DirectedReport,
    DirectedRunConfig,
    Policy,
    TargetResult,
    directed_session,
    explore_devices,
    guided_explore,
    training_session,
)
from aioguiprobe.coordinator.worker import LocalWorkerClient, Worker
from aioguiprobe.encoder import EncoderConfig, GuiEncoder
from aioguiprobe.eventlog import EventLog, EventLog_
from aioguiprobe.harness.harness_progress import EvaluationProgressBar, TrainingProgressBar
from aioguiprobe.harness.harness_stats import (
    bold_best,
    heat_buckets,
    markdown_table,
    summarize,
    union_coverage,
)
from aioguiprobe.learner.trainer import MetricsLog, ModelStorage, Trainer, TrainerConfig
from aioguiprobe.util import ValidationError, atomic_write, canonical_json, fingerprint, run_id, timer


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
EVENTS_NAME = "events.jsonl"
REPORT_NAME = "report.json"
TRAIN_NAME = "train.json"
METRICS_NAME = "metrics.csv"
HEAT_NAME = "heat.json"
CHECKPOINT_NAME = "checkpoint.gpqn"

DEVICE_SEED_STRIDE = 1_000_003
LISTENER_STUDY_REPEATS = 13


@dataclass(frozen=True)
class ExperimentSpec:
    app: str = "diary_toy"
    generator: Optional[GeneratorSpec] = None
    policy: Policy = Policy.guided
    policies: Tuple[Policy, ...] = ()  # commit-eval columns; defaults to (policy,)
    seeds: Tuple[int, ...] = (0,)
    budget: int = 1_000
    max_directed_steps: int = 200
    targets: str = "random_k"  # random_k, listener or changed:<set name>
    target_k: int = 50
    repeats: int = 1
    epsilon: float = 0.0
    loop_escape: Optional[int] = None
    devices: int = 1
    train_steps: Optional[int] = 2_000
    train_seconds: Optional[float] = None
    train_actions: Optional[int] = None
    heat_scale: float = 0.01
    changed_sets: Tuple[str, ...] = ()
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    out: str = "runs"

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValidationError("At least one seed is required")
        if self.budget < 0:
            raise ValidationError("budget must not be negative")
        for name in ("max_directed_steps", "target_k", "repeats", "devices"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.train_steps is not None and self.train_steps < 0:
            raise ValidationError("train_steps must not be negative")
        if self.train_actions is not None and self.train_actions < 0:
            raise ValidationError("train_actions must not be negative")
        if self.train_seconds is not None and self.train_seconds <= 0:
            raise ValidationError("train_seconds must be positive")
        if self.heat_scale <= 0:
            raise ValidationError("heat_scale must be positive")
        if not (self.targets in ("random_k", "listener") or self.targets.startswith("changed:")):
            raise ValidationError(f"Unknown target selection {self.targets!r}")

    def load_app(self) -> AppModel:
        if self.generator is not None:
            return generate_synthetic_app(self.generator)
        return resolve_app(self.app)

    def directed(self, targets: Sequence[int], policy: Optional[Policy] = None) -> DirectedRunConfig:
        policy = policy or self.policy
        return DirectedRunConfig(
            targets=tuple(targets),
            max_directed_steps=self.max_directed_steps,
            budget=self.budget,
            epsilon=1.0 if policy == Policy.random else self.epsilon,
            loop_escape=self.loop_escape,
        )

    def to_dict(self) -> Dict[str, Any]:
        ret = asdict(self)
        ret["policy"] = self.policy.value
        ret["policies"] = [p.value for p in self.policies]
        ret["seeds"] = list(self.seeds)
        ret["changed_sets"] = list(self.changed_sets)
        ret["generator"] = self.generator.to_dict() if self.generator is not None else None
        ret["trainer"] = self.trainer.to_dict()
        ret["encoder"] = self.encoder.to_dict()
        return ret

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> ExperimentSpec:
        known = {f.name for f in fields(ExperimentSpec)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown experiment options: {', '.join(sorted(unknown))}")
        data = dict(data)
        try:
            if data.get("generator") is not None:
                data["generator"] = GeneratorSpec.from_dict(data["generator"])
            if "policy" in data:
                data["policy"] = Policy(data["policy"])
            if "policies" in data:
                data["policies"] = tuple(Policy(p) for p in data["policies"])
            if "seeds" in data:
                data["seeds"] = tuple(int(s) for s in data["seeds"])
            if "changed_sets" in data:
                data["changed_sets"] = tuple(str(s) for s in data["changed_sets"])
            if "trainer" in data:
                data["trainer"] = TrainerConfig.from_dict(data["trainer"])
            if "encoder" in data:
                data["encoder"] = EncoderConfig.from_dict(data["encoder"])
            return ExperimentSpec(**data)
        except (TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"Invalid experiment spec: {e}")

    @staticmethod
    def load(path: Path | str) -> ExperimentSpec:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: {e}")
        return ExperimentSpec.from_dict(data)


def select_targets(model: AppModel, selection: str, k: int, seed: int) -> List[int]:
    """Targets depend only on (app, selection, k, seed), never on the policy"""
    table = model.function_table
    if selection.startswith("changed:"):
        return list(table.changed_set(selection.split(":", 1)[1]))
    pool = [f for f in table.ids if table.is_listener(f)] if selection == "listener" else list(table.ids)
    if not pool:
        raise ValidationError(f"No functions match the {selection!r} selection")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[int(i)] for i in picked]


@dataclass(frozen=True)
class TargetRow:
    seed: int
    repeat: int
    device: str
    function_id: int
    covered: bool
    events_used: int
    incidental: bool
    first_event: Optional[int]

    @staticmethod
    def from_result(seed: int, repeat: int, device: str, result: TargetResult) -> TargetRow:
        return TargetRow(
            seed,
            repeat,
            device,
            result.function_id,
            result.covered,
            result.events_used,
            result.incidental,
            result.first_event,
        )


@dataclass(frozen=True)
class CommitRow:
    commit: str
    policy: str
    seed: int
    events: int  # budget when censored
    censored: bool


@dataclass
class RunReport:
    command: str
    policy: str
    app: str
    app_fingerprint: str
    budget: int
    max_directed_steps: int
    run_id: str
    targets: Dict[int, List[int]] = field(default_factory=dict)  # seed -> targets
    rows: List[TargetRow] = field(default_factory=list)
    commit_rows: List[CommitRow] = field(default_factory=list)
    totals: Dict[str, Any] = field(default_factory=dict)
    heat: Dict[int, int] = field(default_factory=dict)

    def compute_totals(self) -> None:
        per_seed: Dict[str, Any] = {}
        for seed in sorted(self.targets):
            union = union_coverage((r.function_id, r.covered) for r in self.rows if r.seed == seed)
            seed_rows = [r for r in self.rows if r.seed == seed]
            summary = summarize((r.covered, r.events_used) for r in seed_rows)
            per_seed[str(seed)] = {
                "targets": len(self.targets[seed]),
                "covered": sum(union.values()),
                "events_mean": summary.events_mean,
                "success_rate": summary.success_rate,
            }
        overall = summarize((r.covered, r.events_used) for r in self.rows)
        self.totals = {
            "per_seed": per_seed,
            "covered": overall.covered,
            "trials": overall.targets,
            "events_mean": overall.events_mean,
            "success_rate": overall.success_rate,
        }
        if self.commit_rows:
            self.totals["commits"] = {
                policy: {
                    "events_mean": float(np.mean([r.events for r in rows])),
                    "success_rate": sum(not r.censored for r in rows) / len(rows),
                }
                for policy, rows in _group(self.commit_rows, lambda r: r.policy).items()
            }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "policy": self.policy,
            "app": self.app,
            "app_fingerprint": self.app_fingerprint,
            "budget": self.budget,
            "max_directed_steps": self.max_directed_steps,
            "run_id": self.run_id,
            "targets": {str(seed): targets for seed, targets in sorted(self.targets.items())},
            "rows": [asdict(r) for r in self.rows],
            "commit_rows": [asdict(r) for r in self.commit_rows],
            "totals": self.totals,
            "heat": {str(f): n for f, n in sorted(self.heat.items())},
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> RunReport:
        return RunReport(
            command=data["command"],
            policy=data["policy"],
            app=data["app"],
            app_fingerprint=data["app_fingerprint"],
            budget=data["budget"],
            max_directed_steps=data["max_directed_steps"],
            run_id=data["run_id"],
            targets={int(seed): list(t) for seed, t in data.get("targets", {}).items()},
            rows=[TargetRow(**r) for r in data.get("rows", [])],
            commit_rows=[CommitRow(**r) for r in data.get("commit_rows", [])],
            totals=dict(data.get("totals", {})),
            heat={int(f): int(n) for f, n in data.get("heat", {}).items()},
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def rows_csv(self) -> str:
        out = io.StringIO()
        if self.commit_rows:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow([f.name for f in fields(CommitRow)])
            writer.writerows(astuple_row(r) for r in self.commit_rows)
        else:
            writer = csv.writer(out, lineterminator="\n")
            writer.writerow([f.name for f in fields(TargetRow)])
            writer.writerows(astuple_row(r) for r in self.rows)
        return out.getvalue()

    def markdown(self, heat_scale: float = 1.0) -> str:
        title = f"## {self.command} `{self.run_id}`: {self.policy} on {self.app}\n\n"
        if self.commit_rows:
            return title + commit_table([self])
        body = markdown_table(
            ["seed", "targets", "covered", "mean events", "success rate"],
            [
                [seed, str(t["targets"]), str(t["covered"]), _fmt(t["events_mean"]), _fmt(t["success_rate"])]
                for seed, t in self.totals.get("per_seed", {}).items()
            ],
        )
        if self.heat:
            buckets = heat_buckets(self.heat, ((r.function_id, r.covered) for r in self.rows), heat_scale)
            body += f"\nHeat buckets (edges scaled by {heat_scale:g}):\n\n" + markdown_table(
                ["heat", "functions", "trials", "success rate", "flag"],
                [
                    [b.label, str(b.functions), str(b.trials), _fmt(b.success_rate), "*" if b.flagged else ""]
                    for b in buckets
                ],
            )
        return title + body


def astuple_row(row: Any) -> List[Any]:
    return ["" if v is None else v for v in asdict(row).values()]


def _fmt(value: Optional[float]) -> str:
    return "N/A" if value is None else f"{value:.3g}"


def _group(items: Iterable[Any], key: Any) -> Dict[Any, List[Any]]:
    ret: Dict[Any, List[Any]] = {}
    for item in items:
        ret.setdefault(key(item), []).append(item)
    return ret


def commit_table(reports: Sequence[RunReport]) -> str:
    """Rows are changed sets, columns are policies, cells the mean censored events-to-cover"""
    rows = [r for report in reports for r in report.commit_rows]
    policies = sorted({r.policy for r in rows})
    by_commit = _group(rows, lambda r: r.commit)
    table_rows = []
    for commit in sorted(by_commit):
        cells = []
        for policy in policies:
            events = [r.events for r in by_commit[commit] if r.policy == policy]
            cells.append(float(np.mean(events)) if events else None)
        table_rows.append([commit, *bold_best(cells, higher_is_better=False, fmt="{:.1f}")])
    means = []
    rates = []
    for policy in policies:
        policy_rows = [r for r in rows if r.policy == policy]
        means.append(float(np.mean([r.events for r in policy_rows])))
        rates.append(sum(not r.censored for r in policy_rows) / len(policy_rows))
    table_rows.append(["Avg.", *bold_best(means, higher_is_better=False, fmt="{:.1f}")])
    table_rows.append(["Success rate", *bold_best(rates, fmt="{:.0%}")])
    return markdown_table(["commit", *policies], table_rows)


@dataclass(frozen=True)
class RunContext:
    run_id: str
    run_dir: Path
    manifest: Dict[str, Any]


def _manifest(command: str, spec: ExperimentSpec, model: AppModel, checkpoint: Optional[Path]) -> Dict[str, Any]:
    body = spec.to_dict()
    del body["out"]
    return {
        "command": command,
        "spec": body,
        "app_fingerprint": model.fingerprint,
        "checkpoint": str(checkpoint) if checkpoint is not None else None,
        "checkpoint_fingerprint": fingerprint(Path(checkpoint).read_bytes()) if checkpoint is not None else None,
        "version": __version__,
    }


def prepare_run(command: str, spec: ExperimentSpec, model: AppModel, checkpoint: Optional[Path] = None) -> RunContext:
    manifest = _manifest(command, spec, model, checkpoint)
    rid = run_id(manifest)
    run_dir = Path(spec.out) / f"{command}-{rid}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / EVENTS_NAME).unlink(missing_ok=True)
    atomic_write(run_dir / MANIFEST_NAME, json.dumps({**manifest, "run_id": rid}, indent=1, sort_keys=True) + "\n")
    logger.info("Run %s writes to %s", rid, run_dir)
    return RunContext(rid, run_dir, manifest)


def write_report(ctx: RunContext, report: RunReport, heat_scale: float) -> None:
    atomic_write(ctx.run_dir / REPORT_NAME, report.dumps())
    atomic_write(ctx.run_dir / "report.csv", report.rows_csv())
    atomic_write(ctx.run_dir / "report.md", report.markdown(heat_scale))


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Optional[Path]
    steps: int
    target_syncs: int
    model_version: int
    sequences: int
    tuples: int
    actions: int
    heat: Dict[int, int]

    def summary(self) -> Dict[str, Any]:
        return {
            "steps": self.steps,
            "target_syncs": self.target_syncs,
            "model_version": self.model_version,
            "sequences": self.sequences,
            "tuples": self.tuples,
            "actions": self.actions,
            "heat": {str(f): n for f, n in sorted(self.heat.items())},
        }


async def cmd_train(
    spec: ExperimentSpec, elastic_url: Any = None, show_progress: bool = False
) -> TrainResult:
    if spec.train_steps is None and spec.train_seconds is None and spec.train_actions is None:
        raise ValidationError("Training needs a step, wall-clock or action budget")
    model = spec.load_app()
    ctx = prepare_run("train", spec, model)
    seed = spec.seeds[0]
    checkpoint_path = ctx.run_dir / CHECKPOINT_NAME
    checkpoint_path.unlink(missing_ok=True)

    encoder = GuiEncoder(spec.encoder, model.function_table)
    storage = ModelStorage(
        spec.encoder, checkpoint_path, meta={"app_fingerprint": model.fingerprint, "run_id": ctx.run_id}
    )
    trainer = Trainer(spec.trainer, encoder, storage, seed=seed, metrics=MetricsLog(ctx.run_dir / METRICS_NAME))
    worker = Worker(model, encoder, storage, trainer)
    counter = ActionCounter()
    stop = asyncio.Event()
    deadline = timer() + spec.train_seconds if spec.train_seconds is not None else None

    async with EventLog(ctx.run_dir / EVENTS_NAME, elastic_url) as events:
        sessions = [
            DeviceSession.start(
                f"device-{i}",
                model,
                LocalWorkerClient(worker, f"device-{i}"),
                seed + 1 + i * DEVICE_SEED_STRIDE,
                events,
            )
            for i in range(spec.devices)
        ]

        async def run_trainer() -> None:
            await trainer.run(stop, spec.train_steps, deadline)
            stop.set()

        async def run_sessions() -> None:
            await asyncio.gather(
                *(training_session(s, spec.trainer, counter, stop, spec.train_actions) for s in sessions)
            )
            stop.set()

        with TrainingProgressBar(disable=not show_progress) as bar:
            follower = asyncio.create_task(bar.follow(trainer, spec.train_steps))
            try:
                await asyncio.gather(run_trainer(), run_sessions())
            finally:
                follower.cancel()
                await asyncio.gather(follower, return_exceptions=True)
        trainer.finish()

        submitted = sorted(i for s in sessions for i in s.submitted)
        if sorted(trainer.received) != submitted:
            raise AssertionError("Trainer intake lost or duplicated sequences")
        result = TrainResult(
            run_dir=ctx.run_dir,
            checkpoint=checkpoint_path if checkpoint_path.exists() else None,
            steps=trainer.steps,
            target_syncs=trainer.target_syncs,
            model_version=storage.version,
            sequences=len(trainer.received),
            tuples=trainer.tuples_received,
            actions=sum(s.actions for s in sessions),
            heat=dict(trainer.heat),
        )
        events.log("train_summary", {"run_id": ctx.run_id, "app": model.name, **result.summary()}, mirror=True)

    atomic_write(ctx.run_dir / HEAT_NAME, canonical_json(result.summary()["heat"]) + "\n")
    atomic_write(ctx.run_dir / TRAIN_NAME, json.dumps(result.summary(), indent=1, sort_keys=True) + "\n")
    logger.info(
        "Trained %d steps (%d target syncs, model v%d) from %d sequences",
        result.steps, result.target_syncs, result.model_version, result.sequences,
    )
    return result


def _load_heat(checkpoint: Optional[Path]) -> Dict[int, int]:
    if checkpoint is None:
        return {}
    path = Path(checkpoint).parent / HEAT_NAME
    if not path.exists():
        return {}
    return {int(f): int(n) for f, n in json.loads(path.read_text(encoding="utf-8")).items()}


def _load_checkpoint(policy: Policy, checkpoint: Optional[Path]) -> Optional[Checkpoint]:
    if policy != Policy.guided:
        return None
    if checkpoint is None:
        raise ValidationError("The guided policy needs --checkpoint")
    return load_checkpoint(checkpoint)


def _sessions(
    spec: ExperimentSpec,
    model: AppModel,
    policy: Policy,
    seed: int,
    loaded: Optional[Checkpoint],
    encoder: Optional[GuiEncoder],
    events: EventLog_,
) -> List[DeviceSession]:
    return [
        directed_session(
            model, policy, seed + i * DEVICE_SEED_STRIDE, f"device-{i}", loaded, encoder, spec.encoder, events
        )
        for i in range(spec.devices)
    ]


async def _explore(
    sessions: List[DeviceSession], targets: Sequence[int], run_cfg: DirectedRunConfig
) -> Dict[str, DirectedReport]:
    if len(sessions) == 1:
        return {sessions[0].session_id: await guided_explore(sessions[0], run_cfg)}
    return await explore_devices(sessions, targets, run_cfg)


async def cmd_evaluate(
    spec: ExperimentSpec,
    checkpoint: Optional[Path] = None,
    command: str = "evaluate",
    elastic_url: Any = None,
    show_progress: bool = False,
) -> RunReport:
    model = spec.load_app()
    loaded = _load_checkpoint(spec.policy, checkpoint)
    ctx = prepare_run(command, spec, model, checkpoint if loaded is not None else None)
    encoder = GuiEncoder(loaded.encoder_cfg if loaded is not None else spec.encoder, model.function_table)
    report = RunReport(
        command, spec.policy.value, model.name, model.fingerprint, spec.budget, spec.max_directed_steps, ctx.run_id,
        heat=_load_heat(checkpoint) if loaded is not None else {},
    )

    async with EventLog(ctx.run_dir / EVENTS_NAME, elastic_url) as events:
        with EvaluationProgressBar(disable=not show_progress) as bar:
            for seed in spec.seeds:
                targets = select_targets(model, spec.targets, spec.target_k, seed)
                report.targets[seed] = targets
                taskid = bar.start_run(f"seed {seed}", len(targets) * spec.repeats)
                covered = 0
                for repeat in range(spec.repeats):
                    events.log("run_start", {"seed": seed, "repeat": repeat, "targets": targets})
                    sessions = _sessions(spec, model, spec.policy, seed + repeat, loaded, encoder, events)
                    per_device = await _explore(sessions, targets, spec.directed(targets))
                    for device, directed in per_device.items():
                        for r in directed.results:
                            report.rows.append(TargetRow.from_result(seed, repeat, device, r))
                            covered += int(r.covered)
                            bar.update(taskid, advance=1, covered=covered)
        report.compute_totals()
        events.log(
            command,
            {"run_id": ctx.run_id, "app": model.name, "policy": spec.policy.value, **report.totals},
            mirror=True,
        )

    write_report(ctx, report, spec.heat_scale)
    logger.info(
        "%s: %s covered %d of %d target trials",
        ctx.run_id,
        spec.policy.value,
        report.totals["covered"],
        report.totals["trials"],
    )
    return report


async def cmd_baseline_random(spec: ExperimentSpec, elastic_url: Any = None, show_progress: bool = False) -> RunReport:
    return await cmd_evaluate(replace(spec, policy=Policy.random), None, "baseline", elastic_url, show_progress)


async def cmd_commit_eval(
    spec: ExperimentSpec,
    checkpoint: Optional[Path] = None,
    elastic_url: Any = None,
) -> RunReport:
    """Events needed to cover every function of each changed set; the budget when it never happens"""
    policies = spec.policies or (spec.policy,)
    model = spec.load_app()
    table = model.function_table
    names = list(spec.changed_sets) or sorted(table.changed_sets)
    if not names:
        raise ValidationError(f"{model.name} declares no changed sets")
    members = {name: table.changed_set(name) for name in names}
    loaded = _load_checkpoint(Policy.guided, checkpoint) if Policy.guided in policies else None
    recorded = replace(spec, changed_sets=tuple(names), policies=policies)
    ctx = prepare_run("commit-eval", recorded, model, checkpoint if loaded is not None else None)
    encoder = GuiEncoder(loaded.encoder_cfg if loaded is not None else spec.encoder, table)
    report = RunReport(
        "commit-eval", ",".join(p.value for p in policies), model.name, model.fingerprint, spec.budget,
        spec.max_directed_steps, ctx.run_id,
    )

    async with EventLog(ctx.run_dir / EVENTS_NAME, elastic_url) as events:
        for name in names:
            for policy in policies:
                for seed in spec.seeds:
                    events.log("run_start", {"commit": name, "policy": policy.value, "seed": seed})
                    session = directed_session(model, policy, seed, "device-0", loaded, encoder, spec.encoder, events)
                    directed = await guided_explore(session, spec.directed(members[name], policy))
                    needed = directed.events_to_cover_all(members[name])
                    censored = needed is None
                    events_needed = spec.budget if needed is None else needed
                    report.commit_rows.append(CommitRow(name, policy.value, seed, events_needed, censored))
        report.compute_totals()
        events.log("commit_eval", {"run_id": ctx.run_id, "app": model.name, **report.totals}, mirror=True)

    write_report(ctx, report, spec.heat_scale)
    return report


def load_report(run_dir: Path | str) -> RunReport:
    path = Path(run_dir) / REPORT_NAME
    if not path.exists():
        raise ValidationError(f"{run_dir} holds no {REPORT_NAME}")
    return RunReport.from_dict(json.loads(path.read_text(encoding="utf-8")))


def cmd_report(run_dirs: Sequence[Path | str], out: Optional[Path] = None) -> str:
    """Merges runs into comparison tables joined on (app, seed); target sets must agree"""
    if not run_dirs:
        raise ValidationError("No runs to report on")
    reports = [load_report(d) for d in run_dirs]
    sections = []

    evaluations = [r for r in reports if r.rows or (r.targets and not r.commit_rows)]
    if evaluations:
        policy_counts = Counter(r.policy for r in evaluations)
        labels = [r.policy if policy_counts[r.policy] == 1 else f"{r.policy} ({r.run_id})" for r in evaluations]
        keys: Dict[Tuple[str, int], List[int]] = {}
        for report in evaluations:
            for seed, targets in report.targets.items():
                known = keys.setdefault((report.app_fingerprint, seed), targets)
                if known != targets:
                    raise ValidationError(f"Run {report.run_id} used different targets for {report.app} seed {seed}")

        table_rows = []
        for app_fp, seed in sorted(keys):
            values: List[Optional[float]] = []
            for report in evaluations:
                t = report.totals.get("per_seed", {}).get(str(seed)) if report.app_fingerprint == app_fp else None
                values.append(t["covered"] if t is not None else None)
            app_name = next(r.app for r in evaluations if r.app_fingerprint == app_fp)
            table_rows.append([app_name, str(seed), *bold_best(values)])
        means = [r.totals.get("events_mean") for r in evaluations]
        rates = [r.totals.get("success_rate") for r in evaluations]
        table_rows.append(["", "mean events", *bold_best(means, False, "{:.1f}")])
        table_rows.append(["", "success rate", *bold_best(rates, True, "{:.1%}")])
        sections.append("## Target coverage\n\n" + markdown_table(["app", "seed", *labels], table_rows))

    commits = [r for r in reports if r.commit_rows]
    if commits:
        sections.append("## Events to cover changed sets\n\n" + commit_table(commits))

    text = "\n".join(sections)
    if out is not None:
        atomic_write(Path(out), text)
    return text


@dataclass
class ReplayResult:
    run_id: str
    identical: bool
    differences: List[str]


async def cmd_replay(run_dir: Path | str) -> ReplayResult:
    """Re-executes a run from its manifest in a scratch directory and diffs the outputs"""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / MANIFEST_NAME).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"Cannot read manifest in {run_dir}: {e}")
    command = manifest["command"]
    checkpoint = Path(manifest["checkpoint"]) if manifest.get("checkpoint") else None
    if checkpoint is not None and fingerprint(checkpoint.read_bytes()) != manifest["checkpoint_fingerprint"]:
        raise ValidationError(f"Checkpoint {checkpoint} changed since run {manifest['run_id']}")

    with tempfile.TemporaryDirectory(prefix="aioguiprobe-replay-") as scratch:
        spec = ExperimentSpec.from_dict({**manifest["spec"], "out": scratch})
        compared = [REPORT_NAME]
        if command == "train":
            await cmd_train(spec)
            compared = [TRAIN_NAME, METRICS_NAME]
        elif command == "evaluate":
            await cmd_evaluate(spec, checkpoint)
        elif command == "baseline":
            await cmd_baseline_random(spec)
        elif command == "commit-eval":
            await cmd_commit_eval(spec, checkpoint)
        else:
            raise ValidationError(f"Cannot replay {command!r} runs")

        new_dir = Path(scratch) / f"{command}-{manifest['run_id']}"
        differences = [name for name in compared if (run_dir / name).read_bytes() != (new_dir / name).read_bytes()]
    if differences:
        logger.warning("Replay of %s differs in %s", manifest["run_id"], ", ".join(differences))
    return ReplayResult(manifest["run_id"], not differences, differences)
