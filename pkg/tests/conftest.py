from __future__ import annotations

from fractions import Fraction
from typing import List

import numpy as np
import pytest

from aioguiprobe.app.app_model import (
    EXIT,
    ActionSpec,
    AppModel,
    EventKind,
    FunctionTable,
    Outcome,
    Screen,
    Transition,
    Widget,
    initial_state,
    load_fixture,
    state_actions,
    step,
)
from aioguiprobe.encoder import EncoderConfig, GuiEncoder
from aioguiprobe.learner.episode import EpisodeSequence
from aioguiprobe.learner.trainer import ModelStorage, Trainer, TrainerConfig


SMALL_ENCODER = EncoderConfig(state_dim=32, action_dim=16, goal_dim=16)
CHAIN_GOAL = 1


def chain_app(length: int = 6) -> AppModel:
    """
    `length` screens in a row: click moves one screen forward, back one
    screen backward. Clicking on the last screen triggers CHAIN_GOAL.
    """
    screens = {}
    transitions = []
    for i in range(length):
        screen_id = f"S{i}"
        widget = Widget("android.widget.Button", "com.tiny:id/next", "Next", (0, 0, 100, 100), (EventKind.click,))
        screens[screen_id] = Screen(screen_id, f"com.tiny.Step{i}Activity", (widget,))
        last = i == length - 1
        transitions.append(
            Transition(
                screen_id,
                ActionSpec(EventKind.click, 0),
                (Outcome(Fraction(1), "S0" if last else f"S{i + 1}", frozenset({CHAIN_GOAL}) if last else frozenset()),),
            )
        )
        transitions.append(
            Transition(screen_id, ActionSpec(EventKind.back), (Outcome(Fraction(1), EXIT if i == 0 else f"S{i - 1}"),))
        )
    return AppModel(
        name="tiny_chain",
        version="1",
        entry_screen="S0",
        screens=screens,
        transitions=tuple(transitions),
        function_table=FunctionTable({CHAIN_GOAL: "com.tiny.ChainActivity.onFinish", 2: "com.tiny.Unused.helper"}),
        screen_size=(100, 100),
    )


def random_sequences(model: AppModel, n: int, length: int, seed: int, prefix: str = "seq") -> List[EpisodeSequence]:
    """Uniform random walks, `length` steps each, continuing from where the last one stopped"""
    rng = np.random.default_rng(seed)
    state = initial_state(model, rng)
    ret = []
    for i in range(n):
        seq = EpisodeSequence(f"{prefix}:{i:06d}", max_len=length)
        for _ in range(length):
            actions = state_actions(state)
            action = actions[int(rng.integers(len(actions)))]
            result = step(model, state, action, rng)
            seq.record(state, action, result.covered, result.next)
            state = result.next
        ret.append(seq)
    return ret


@pytest.fixture
def diary() -> AppModel:
    return load_fixture("diary_toy")


@pytest.fixture
def tiny_app() -> AppModel:
    return chain_app()


@pytest.fixture
def encoder(diary: AppModel) -> GuiEncoder:
    return GuiEncoder(EncoderConfig(), diary.function_table)


@pytest.fixture
def trained_storage(diary: AppModel) -> ModelStorage:
    """A published model after a few optimizer steps on random diary walks"""
    storage = ModelStorage(SMALL_ENCODER, meta={"app_fingerprint": diary.fingerprint})
    cfg = TrainerConfig(min_fill=16, batch_size=8, hidden=(16, 8), publish_interval=10)
    trainer = Trainer(cfg, GuiEncoder(SMALL_ENCODER, diary.function_table), storage, seed=3)
    for seq in random_sequences(diary, 10, 16, seed=3):
        trainer.ingest(seq)
    for _ in range(20):
        trainer.train_step()
    assert storage.version == 2
    return storage
