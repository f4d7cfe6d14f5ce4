from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from aioguiprobe.app.app_model import ActionSpec, FunctionTable, GuiState, state_actions
from aioguiprobe.encoder import state_key
from aioguiprobe.util import ValidationError


if TYPE_CHECKING:
    from aioguiprobe.learner.trainer import TrainerConfig


REWARD_TRIGGER = 1.0
REWARD_NO_CHANGE = -0.001
REWARD_LATER_BASE = 0.01
REWARD_OTHER = -0.0001
DEFAULT_MAX_LEN = 64


class RecordResult(Enum):
    OPEN = auto()
    SEALED = auto()


@dataclass(frozen=True)
class EpisodeStep:
    state: GuiState
    state_key: str
    action: ActionSpec
    covered: frozenset[int]
    next_state_key: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state": self.state.to_dict(),
            "action": self.action.to_dict(),
            "covered": sorted(self.covered),
            "next_state_key": self.next_state_key,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> EpisodeStep:
        state = GuiState.from_dict(data["state"])
        return EpisodeStep(
            state=state,
            state_key=state_key(state),
            action=ActionSpec.from_dict(data["action"]),
            covered=frozenset(int(f) for f in data.get("covered", ())),
            next_state_key=str(data["next_state_key"]),
        )


@dataclass
class EpisodeSequence:
    """`<s0, a0, F0, ..., st, at, Ft, st+1>` with at most `max_len` steps"""

    sequence_id: str = ""
    max_len: int = DEFAULT_MAX_LEN
    steps: List[EpisodeStep] = field(default_factory=list)
    terminal_state: Optional[GuiState] = None
    goal: Optional[int] = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def sealed(self) -> bool:
        return len(self.steps) >= self.max_len

    def next_state(self, t: int) -> GuiState:
        if t + 1 < len(self.steps):
            return self.steps[t + 1].state
        if self.terminal_state is None:
            raise ValidationError(f"Sequence {self.sequence_id!r} has no terminal state")
        return self.terminal_state

    def record(
        self, state: GuiState, action: ActionSpec, covered: frozenset[int], next_state: GuiState
    ) -> RecordResult:
        if self.sealed:
            raise ValidationError(f"Sequence {self.sequence_id!r} is sealed")
        key = state_key(state)
        if self.steps and self.steps[-1].next_state_key != key:
            raise ValidationError(f"Chain break at step {len(self.steps)} of sequence {self.sequence_id!r}")
        self.steps.append(EpisodeStep(state, key, action, frozenset(covered), state_key(next_state)))
        self.terminal_state = next_state
        return RecordResult.SEALED if self.sealed else RecordResult.OPEN

    def covered_functions(self) -> frozenset[int]:
        return frozenset().union(*(s.covered for s in self.steps)) if self.steps else frozenset()

    def validate(self, table: Optional[FunctionTable] = None) -> None:
        """Raises ValidationError naming the first offending step"""
        if self.max_len < 1:
            raise ValidationError("max_len must be positive")
        if not self.steps:
            raise ValidationError("Sequence is empty")
        if len(self.steps) > self.max_len:
            raise ValidationError(f"Sequence has {len(self.steps)} steps, more than max_len {self.max_len}")
        if self.terminal_state is None:
            raise ValidationError("Sequence has no terminal state")
        for index, step in enumerate(self.steps):
            if step.state_key != state_key(step.state):
                raise ValidationError(f"State key mismatch at step {index}")
            if index + 1 < len(self.steps) and step.next_state_key != self.steps[index + 1].state_key:
                raise ValidationError(f"Chain break at step {index + 1}")
            if table is not None:
                unknown = [f for f in step.covered if f not in table]
                if unknown:
                    raise ValidationError(f"Unknown function {unknown[0]} covered at step {index}")
        if self.steps[-1].next_state_key != state_key(self.terminal_state):
            raise ValidationError(f"Chain break at step {len(self.steps)}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sequence_id": self.sequence_id,
            "max_len": self.max_len,
            "goal": self.goal,
            "steps": [step.to_dict() for step in self.steps],
            "terminal_state": self.terminal_state.to_dict() if self.terminal_state is not None else None,
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> EpisodeSequence:
        try:
            terminal = data.get("terminal_state")
            goal = data.get("goal")
            return EpisodeSequence(
                sequence_id=str(data.get("sequence_id", "")),
                max_len=int(data.get("max_len", DEFAULT_MAX_LEN)),
                steps=[EpisodeStep.from_dict(step) for step in data["steps"]],
                terminal_state=GuiState.from_dict(terminal) if terminal is not None else None,
                goal=int(goal) if goal is not None else None,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"Malformed sequence: {e!r}")


def record_step(
    seq: EpisodeSequence, state: GuiState, action: ActionSpec, covered: frozenset[int], next_state: GuiState
) -> RecordResult:
    return seq.record(state, action, covered, next_state)


@dataclass(frozen=True)
class TrainingTuple:
    goal: int
    state: GuiState
    action: ActionSpec
    reward: float
    next_state: GuiState
    done: bool
    next_candidates: Tuple[ActionSpec, ...]
    sequence_id: str = ""
    step_index: int = 0


def compute_reward(seq: EpisodeSequence, t: int, g: int, gamma: float) -> Tuple[float, bool]:
    if not 0 <= t < len(seq.steps):
        raise ValidationError(f"Step index {t} out of range for a sequence of {len(seq.steps)} steps")
    current = seq.steps[t]
    if g in current.covered:
        return REWARD_TRIGGER, True
    if current.state_key == current.next_state_key:
        return REWARD_NO_CHANGE, False
    for n in range(1, len(seq.steps) - t):
        if g in seq.steps[t + n].covered:
            return REWARD_LATER_BASE * gamma**n, False
    return REWARD_OTHER, False


def future_coverage(seq: EpisodeSequence) -> List[Tuple[int, ...]]:
    """For every step t, the sorted union of F_t .. F_N"""
    unions: List[Tuple[int, ...]] = [()] * len(seq.steps)
    running: frozenset[int] = frozenset()
    for t in reversed(range(len(seq.steps))):
        running = running | seq.steps[t].covered
        unions[t] = tuple(sorted(running))
    return unions


def relabel(seq: EpisodeSequence, cfg: TrainerConfig, rng: np.random.Generator) -> List[TrainingTuple]:
    tuples: List[TrainingTuple] = []
    unions = future_coverage(seq)
    for t, step in enumerate(seq.steps):
        support = unions[t]
        if not support:
            continue
        next_state = seq.next_state(t)
        candidates = tuple(state_actions(next_state))
        for _ in range(cfg.relabel_count):
            goal = support[int(rng.integers(len(support)))]
            reward, done = compute_reward(seq, t, goal, cfg.gamma)
            tuples.append(
                TrainingTuple(goal, step.state, step.action, reward, next_state, done, candidates, seq.sequence_id, t)
            )
    return tuples
