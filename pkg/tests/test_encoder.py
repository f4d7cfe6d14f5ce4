import numpy as np
import pytest

from aioguiprobe.app.app_model import ActionSpec, AppModel, EventKind, FunctionTable, GuiState, Screen, Widget, initial_state
from aioguiprobe.encoder import (
    EVENT_BLOCK,
    EncoderConfig,
    GuiEncoder,
    encode_action,
    encode_goal,
    encode_input,
    encode_state,
    state_key,
)
from aioguiprobe.util import ValidationError


BUTTON = Widget("android.widget.Button", "com.x:id/ok", "OK", (0, 0, 10, 10), (EventKind.click,))
FIELD = Widget("android.widget.EditText", "com.x:id/name", "", (0, 10, 10, 20), (EventKind.click, EventKind.text_input))


def test_defaults_add_up() -> None:
    assert EncoderConfig().input_dim == 256


@pytest.mark.parametrize("kwargs", [{"state_dim": 0}, {"action_dim": 4}, {"goal_dim": -1}, {"hash_seed": -1}])
def test_invalid_config(kwargs: dict) -> None:
    with pytest.raises(ValidationError):
        EncoderConfig(**kwargs)


def test_unknown_config_keys() -> None:
    with pytest.raises(ValidationError, match="Unknown encoder"):
        EncoderConfig.from_dict({"state_dim": 128, "widht": 3})


def test_empty_screen_only_activity() -> None:
    cfg = EncoderConfig()
    vector = encode_state(cfg, GuiState("S0", "com.x.MainActivity", ()))
    assert np.count_nonzero(vector) == 1
    assert vector.max() == pytest.approx(0.5)


def test_state_bounded_and_deterministic(diary: AppModel) -> None:
    cfg = EncoderConfig()
    for screen in diary.screens.values():
        a = encode_state(cfg, screen)
        b = encode_state(cfg, screen)
        assert a.shape == (cfg.state_dim,)
        assert np.array_equal(a, b)
        assert np.all((a >= 0) & (a <= 1))


def test_dynamic_text_changes_vector_not_key(diary: AppModel) -> None:
    cfg = EncoderConfig()
    base = initial_state(diary, np.random.default_rng(1))
    others = [initial_state(diary, np.random.default_rng(seed)) for seed in range(2, 12)]
    assert all(state_key(other) == state_key(base) for other in others)
    assert any(not np.array_equal(encode_state(cfg, other), encode_state(cfg, base)) for other in others)


def test_widget_order_does_not_matter() -> None:
    cfg = EncoderConfig()
    a = GuiState("S0", "com.x.MainActivity", (BUTTON, FIELD))
    b = GuiState("S0", "com.x.MainActivity", (FIELD, BUTTON))
    assert np.array_equal(encode_state(cfg, a), encode_state(cfg, b))
    assert state_key(a) == state_key(b)


def test_back_only_uses_event_block() -> None:
    cfg = EncoderConfig()
    vector = encode_action(cfg, ActionSpec(EventKind.back), Screen("S0", "a", (BUTTON,)))
    assert np.count_nonzero(vector) == 1
    assert np.count_nonzero(vector[:EVENT_BLOCK]) == 1


def test_same_widget_content_same_action_vector() -> None:
    cfg = EncoderConfig()
    twin = Widget(BUTTON.widget_class, BUTTON.resource_id, "Other text", (0, 20, 10, 30), (EventKind.click,))
    screen = Screen("S0", "a", (BUTTON, twin))
    assert np.array_equal(
        encode_action(cfg, ActionSpec(EventKind.click, 0), screen), encode_action(cfg, ActionSpec(EventKind.click, 1), screen)
    )


def test_distinct_resource_ids_usually_differ() -> None:
    other = Widget(BUTTON.widget_class, "com.x:id/cancel", "", BUTTON.bounds, (EventKind.click,))
    screen = Screen("S0", "a", (BUTTON, other))
    differ = 0
    for seed in range(1000):
        cfg = EncoderConfig(hash_seed=seed)
        a = encode_action(cfg, ActionSpec(EventKind.click, 0), screen)
        b = encode_action(cfg, ActionSpec(EventKind.click, 1), screen)
        differ += not np.array_equal(a, b)
    assert differ / 1000 >= 1 - 2 / EncoderConfig().action_dim


def test_invalid_action() -> None:
    cfg = EncoderConfig()
    screen = Screen("S0", "a", (BUTTON,))
    with pytest.raises(ValidationError):
        encode_action(cfg, ActionSpec(EventKind.text_input, 0), screen)
    with pytest.raises(ValidationError):
        encode_action(cfg, ActionSpec(EventKind.click, 3), screen)


def test_goal_vectors(diary: AppModel) -> None:
    cfg = EncoderConfig()
    table = diary.function_table
    assert np.array_equal(encode_goal(cfg, 11, table), encode_goal(cfg, 11, table))
    assert not np.array_equal(encode_goal(cfg, 11, table), encode_goal(cfg, 14, table))
    with pytest.raises(ValidationError):
        encode_goal(cfg, 999, table)


def test_empty_signature_is_zero() -> None:
    cfg = EncoderConfig()
    assert not encode_goal(cfg, 0, FunctionTable({0: ""})).any()


def test_input_concatenation(diary: AppModel, encoder: GuiEncoder) -> None:
    cfg = encoder.cfg
    state = initial_state(diary)
    action = ActionSpec(EventKind.click, 0)
    vector = encode_input(cfg, state, action, 2, diary.function_table)
    assert vector.shape == (256,)
    assert np.array_equal(vector[: cfg.state_dim], encode_state(cfg, state))
    assert np.array_equal(vector, encoder.input_vector(state, action, 2))


def test_candidate_matrix_rows(diary: AppModel, encoder: GuiEncoder) -> None:
    state = initial_state(diary)
    actions = [ActionSpec(EventKind.click, 0), ActionSpec(EventKind.click, 3), ActionSpec(EventKind.back)]
    matrix = encoder.candidate_matrix(state, actions, 5)
    assert matrix.shape == (3, encoder.input_dim)
    for row, action in zip(matrix, actions):
        assert np.array_equal(row, encoder.input_vector(state, action, 5))
