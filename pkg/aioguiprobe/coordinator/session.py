from __future__ import annotations

import asyncio
import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple, TypeVar

import more_itertools
import numpy as np

from aioguiprobe.app.app_model import ActionSpec, AppModel, GuiState, initial_state, state_actions, step
from aioguiprobe.checkpoint import Checkpoint
from aioguiprobe.coordinator.worker import LocalWorkerClient, Worker, WorkerClient
from aioguiprobe.encoder import EncoderConfig, GuiEncoder, state_key
from aioguiprobe.eventlog import EventLog_
from aioguiprobe.learner.episode import EpisodeSequence, RecordResult
from aioguiprobe.learner.trainer import ModelStorage, TrainerConfig
from aioguiprobe.qnet import init_params
from aioguiprobe.util import ValidationError


logger = logging.getLogger(__name__)

D = TypeVar("D", bound=Hashable)


class Policy(str, Enum):
    guided = "guided"  # greedy over a trained checkpoint
    random = "random"
    untrained = "untrained"


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_steps: int = 50_000

    def __post_init__(self) -> None:
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValidationError("Epsilon schedule needs 0 <= eps_end <= eps_start <= 1")
        if self.decay_steps < 1:
            raise ValidationError("Epsilon decay_steps must be positive")

    @staticmethod
    def from_trainer_config(cfg: TrainerConfig) -> EpsilonSchedule:
        return EpsilonSchedule(cfg.eps_start, cfg.eps_end, cfg.eps_decay_steps)

    def value(self, actions: int) -> float:
        fraction = min(actions / self.decay_steps, 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * fraction


class ActionCounter:
    """Global action count shared by every session of a run"""

    def __init__(self) -> None:
        self.value = 0

    def next(self) -> int:
        ret = self.value
        self.value += 1
        return ret


@dataclass
class DeviceSession:
    session_id: str
    model: AppModel
    client: Optional[WorkerClient]
    rng: np.random.Generator
    state: GuiState
    events: EventLog_ = EventLog_.NOOP
    sequence: Optional[EpisodeSequence] = None
    goal: Optional[int] = None
    max_len: int = 64
    refresh_interval: int = 100
    model_version: int = 0
    actions: int = 0
    submitted: List[str] = field(default_factory=list)
    _sequence_counter: int = 0

    @staticmethod
    def start(
        session_id: str,
        model: AppModel,
        client: Optional[WorkerClient],
        seed: int,
        events: EventLog_ = EventLog_.NOOP,
    ) -> DeviceSession:
        rng = np.random.default_rng(seed)
        return DeviceSession(session_id, model, client, rng, initial_state(model, rng), events)

    def new_sequence(self, max_len: int) -> EpisodeSequence:
        self._sequence_counter += 1
        self.sequence = EpisodeSequence(f"{self.session_id}:{self._sequence_counter:06d}", max_len, goal=self.goal)
        return self.sequence

    def sample_goal(self) -> int:
        ids = self.model.function_table.ids
        self.goal = ids[int(self.rng.integers(len(ids)))]
        return self.goal


async def select_action(
    session: DeviceSession, candidate_actions: Sequence[ActionSpec], epsilon: float, rng: np.random.Generator
) -> ActionSpec:
    """ε-greedy; the greedy choice is the worker's argmax with lowest-ordinal tie-break"""
    if not candidate_actions:
        raise ValidationError("No candidate actions")
    if len(candidate_actions) == 1:
        return candidate_actions[0]
    explore = rng.random() < epsilon
    pick = int(rng.integers(len(candidate_actions)))
    if explore:
        return candidate_actions[pick]
    if session.client is None or session.goal is None:
        raise ValidationError(f"Session {session.session_id} cannot act greedily without a worker and a goal")
    result = await session.client.get_q(session.state, candidate_actions, session.goal)
    session.model_version = max(session.model_version, result.model_version)
    return candidate_actions[result.chosen]


async def _submit(session: DeviceSession) -> None:
    seq = session.sequence
    if seq is None or not seq.steps:
        return
    assert session.client is not None
    await session.client.add_training_data(seq)
    session.submitted.append(seq.sequence_id)


async def training_session(
    session: DeviceSession,
    cfg: TrainerConfig,
    counter: ActionCounter,
    stop: Optional[asyncio.Event] = None,
    max_actions: Optional[int] = None,
) -> List[str]:
    """
    Explores with ε-greedy actions and submits sequences when they seal or
    when the current goal is triggered. Returns the submitted sequence ids.
    """
    if session.client is None:
        raise ValidationError("A training session needs a worker")
    schedule = EpsilonSchedule.from_trainer_config(cfg)
    await session.client.hello(session.model.fingerprint)
    session.model_version = await session.client.refresh(session.model_version)
    session.sample_goal()
    seq = session.new_sequence(cfg.max_len)
    logger.info("Session %s training, first goal %d", session.session_id, session.goal)

    while (stop is None or not stop.is_set()) and (max_actions is None or session.actions < max_actions):
        if session.actions and session.actions % cfg.refresh_interval == 0:
            session.model_version = max(session.model_version, await session.client.refresh(session.model_version))
        epsilon = schedule.value(counter.next())
        action = await select_action(session, state_actions(session.state), epsilon, session.rng)
        result = step(session.model, session.state, action, session.rng)
        session.actions += 1
        recorded = seq.record(session.state, action, result.covered, result.next)
        session.events.log(
            "train_step",
            {
                "session": session.session_id,
                "index": session.actions,
                "sequence": seq.sequence_id,
                "goal": session.goal,
                "screen": session.state.screen_id,
                "action": str(action),
                "covered": sorted(result.covered),
                "next": result.next.screen_id,
                "exited": result.exited,
                "epsilon": epsilon,
                "model_version": session.model_version,
            },
        )
        session.state = result.next
        if session.goal in result.covered or recorded == RecordResult.SEALED:
            await _submit(session)
            session.sample_goal()
            seq = session.new_sequence(cfg.max_len)
        await asyncio.sleep(0)

    await _submit(session)
    session.sequence = None
    logger.info("Session %s stopped after %d actions", session.session_id, session.actions)
    return session.submitted


@dataclass(frozen=True)
class DirectedRunConfig:
    targets: Tuple[int, ...]
    max_directed_steps: int = 200
    budget: int = 1_000
    epsilon: float = 0.0
    loop_escape: Optional[int] = None  # force one random action after this many identical states in a row

    def __post_init__(self) -> None:
        if self.max_directed_steps < 1:
            raise ValidationError("max_directed_steps must be positive")
        if self.budget < 0:
            raise ValidationError("The event budget must not be negative")
        if not 0 <= self.epsilon <= 1:
            raise ValidationError("epsilon must be in [0, 1]")
        if self.loop_escape is not None and self.loop_escape < 2:
            raise ValidationError("loop_escape must be at least 2")

    def to_dict(self) -> Dict[str, Any]:
        ret = asdict(self)
        ret["targets"] = list(self.targets)
        return ret

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> DirectedRunConfig:
        known = {f.name for f in fields(DirectedRunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown directed-run options: {', '.join(sorted(unknown))}")
        return DirectedRunConfig(**{**data, "targets": tuple(int(t) for t in data.get("targets", ()))})


@dataclass(frozen=True)
class TargetResult:
    function_id: int
    covered: bool
    events_used: int
    incidental: bool = False
    first_event: Optional[int] = None  # run-wide 1-based index of the first covering event

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> TargetResult:
        return TargetResult(**data)


@dataclass
class DirectedReport:
    results: List[TargetResult] = field(default_factory=list)
    total_events: int = 0
    first_covered: Dict[int, int] = field(default_factory=dict)
    escapes: int = 0

    @property
    def covered(self) -> int:
        return sum(1 for r in self.results if r.covered)

    def events_to_cover_all(self, functions: Sequence[int]) -> Optional[int]:
        if all(f in self.first_covered for f in functions):
            return max((self.first_covered[f] for f in functions), default=0)
        return None


async def guided_explore(session: DeviceSession, run_cfg: DirectedRunConfig) -> DirectedReport:
    """
    Works through the targets in order, taking greedy actions toward each one
    until it is covered, its per-target step limit is hit or the run budget
    runs out. The run continues from wherever the previous target left off.
    """
    report = DirectedReport()
    repeats = 0
    last_key: Optional[str] = None

    for target in run_cfg.targets:
        if target not in session.model.function_table:
            raise ValidationError(f"Unknown target function {target}")
        if target in report.first_covered:
            report.results.append(TargetResult(target, True, 0, True, report.first_covered[target]))
            continue
        session.goal = target
        used = 0
        covered = False
        while used < run_cfg.max_directed_steps and report.total_events < run_cfg.budget:
            candidates = state_actions(session.state)
            key = state_key(session.state)
            repeats = repeats + 1 if key == last_key else 1
            last_key = key
            if run_cfg.loop_escape is not None and repeats >= run_cfg.loop_escape:
                action = candidates[int(session.rng.integers(len(candidates)))]
                repeats = 0
                report.escapes += 1
                logger.info("Session %s stuck on %s, forcing %s", session.session_id, session.state.screen_id, action)
            else:
                action = await select_action(session, candidates, run_cfg.epsilon, session.rng)
            result = step(session.model, session.state, action, session.rng)
            used += 1
            report.total_events += 1
            for function_id in result.covered:
                report.first_covered.setdefault(function_id, report.total_events)
            session.events.log(
                "directed_step",
                {
                    "session": session.session_id,
                    "index": report.total_events,
                    "target": target,
                    "screen": session.state.screen_id,
                    "action": str(action),
                    "covered": sorted(result.covered),
                    "next": result.next.screen_id,
                    "exited": result.exited,
                },
            )
            session.state = result.next
            if target in result.covered:
                covered = True
                break
        report.results.append(TargetResult(target, covered, used, False, report.first_covered.get(target)))
    return report


def assign_goals(devices: Sequence[D], targets: Sequence[int]) -> Dict[D, List[int]]:
    """Round-robin partition of the targets, preserving their order"""
    if not devices:
        raise ValidationError("No devices to assign goals to")
    return {device: list(part) for device, part in zip(devices, more_itertools.distribute(len(devices), targets))}


def directed_session(
    model: AppModel,
    policy: Policy,
    seed: int,
    session_id: str = "device-0",
    checkpoint: Optional[Checkpoint] = None,
    encoder: Optional[GuiEncoder] = None,
    encoder_cfg: Optional[EncoderConfig] = None,
    events: EventLog_ = EventLog_.NOOP,
) -> DeviceSession:
    """Session wired to an in-process worker serving the policy's model"""
    if policy == Policy.random:
        return DeviceSession.start(session_id, model, None, seed, events)

    if policy == Policy.guided:
        if checkpoint is None:
            raise ValidationError("The guided policy needs a checkpoint")
        check_compatible(checkpoint, model)
        storage = ModelStorage.from_checkpoint(checkpoint)
    else:
        cfg = encoder_cfg or EncoderConfig()
        storage = ModelStorage(cfg)
        storage.initialize(init_params(cfg.input_dim, seed))

    if encoder is None or encoder.cfg != storage.encoder_cfg:
        encoder = GuiEncoder(storage.encoder_cfg, model.function_table)
    worker = Worker(model, encoder, storage)
    worker.register(session_id, model.fingerprint)
    return DeviceSession.start(session_id, model, LocalWorkerClient(worker, session_id), seed, events)


def check_compatible(checkpoint: Checkpoint, model: AppModel) -> None:
    if checkpoint.pred.input_dim != checkpoint.encoder_cfg.input_dim:
        raise ValidationError(
            f"Checkpoint input size {checkpoint.pred.input_dim} "
            f"does not match its encoder ({checkpoint.encoder_cfg.input_dim})"
        )
    trained_on = checkpoint.meta.get("app_fingerprint")
    if trained_on is not None and trained_on != model.fingerprint:
        raise ValidationError(f"Checkpoint was trained on app {trained_on}, not {model.fingerprint}")


async def explore_devices(
    sessions: Sequence[DeviceSession], targets: Sequence[int], run_cfg: DirectedRunConfig
) -> Dict[str, DirectedReport]:
    """Guided exploration on several devices at once, each with its own share of the targets"""
    assignment = assign_goals([s.session_id for s in sessions], targets)
    reports = await asyncio.gather(
        *(
            guided_explore(
                s,
                DirectedRunConfig(
                    tuple(assignment[s.session_id]),
                    run_cfg.max_directed_steps,
                    run_cfg.budget,
                    run_cfg.epsilon,
                    run_cfg.loop_escape,
                ),
            )
            for s in sessions
        )
    )
    return {s.session_id: report for s, report in zip(sessions, reports)}
