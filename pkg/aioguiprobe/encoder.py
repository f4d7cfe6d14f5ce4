"""
Feature-hashing encoder for (state, action, goal) inputs of the Q-network.

Tokens are hashed with MurmurHash3 into fixed-size buckets with an alternating
sign, the absolute bucket totals are squashed with x/(1+x) so that every entry
lies in [0, 1].
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import mmh3
import numpy as np
from cachetools import LRUCache

from aioguiprobe.app.app_model import ActionSpec, EventKind, FunctionTable, GuiState, Screen, Widget
from aioguiprobe.util import ValidationError, canonical_json


EVENT_BLOCK = 8
MIN_DIM = 8


@dataclass(frozen=True)
class EncoderConfig:
    state_dim: int = 128
    action_dim: int = 64
    goal_dim: int = 64
    hash_seed: int = 0x5EED_C0DE

    def __post_init__(self) -> None:
        for name in ("state_dim", "action_dim", "goal_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < MIN_DIM:
                raise ValidationError(f"EncoderConfig.{name} must be an integer >= {MIN_DIM}, got {value!r}")
        if not 0 <= self.hash_seed < 1 << 64:
            raise ValidationError("EncoderConfig.hash_seed must be a 64-bit unsigned integer")

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.action_dim + self.goal_dim

    @property
    def _murmur_seed(self) -> int:
        return (self.hash_seed ^ (self.hash_seed >> 32)) & 0xFFFFFFFF

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> EncoderConfig:
        known = {f.name for f in fields(EncoderConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown encoder options: {', '.join(sorted(unknown))}")
        return EncoderConfig(**data)


def _hash_tokens(tokens: Iterable[str], dim: int, seed: int, offset: int = 0) -> np.ndarray:
    buckets = np.zeros(dim, dtype=np.float64)
    width = dim - offset
    for token in tokens:
        h = mmh3.hash(token, seed, signed=True)
        buckets[offset + abs(h) % width] += 1.0 if h >= 0 else -1.0
    totals = np.abs(buckets)
    return totals / (1.0 + totals)


def _widget_tokens(widget: Widget) -> List[str]:
    tokens = [f"class={widget.widget_class}", f"rid={widget.resource_id}"]
    tokens += [f"text={word}" for word in widget.text.lower().split()]
    tokens += [f"event={event.value}" for event in widget.supported_events]
    return tokens


def state_tokens(state: Union[GuiState, Screen]) -> List[str]:
    tokens = [f"activity={state.activity}"]
    for widget in state.widgets:
        tokens += _widget_tokens(widget)
    return tokens


def encode_state(cfg: EncoderConfig, state: Union[GuiState, Screen]) -> np.ndarray:
    return _hash_tokens(state_tokens(state), cfg.state_dim, cfg._murmur_seed)


def encode_action(cfg: EncoderConfig, action: ActionSpec, screen: Union[GuiState, Screen]) -> np.ndarray:
    vector = np.zeros(cfg.action_dim, dtype=np.float64)
    vector[action.event_kind.ordinal] = 1.0
    if action.widget_index is None:
        if action.event_kind != EventKind.back:
            raise ValidationError(f"Screen-level action must be back, got {action}")
        return vector
    if not 0 <= action.widget_index < len(screen.widgets):
        raise ValidationError(f"Action {action} targets a widget missing from the screen")
    widget = screen.widgets[action.widget_index]
    if action.event_kind not in widget.supported_events:
        raise ValidationError(f"Action {action} not supported by {widget.widget_class}")
    tokens = [
        f"class={widget.widget_class}",
        f"rid={widget.resource_id}",
        f"target={action.event_kind.value}|{widget.widget_class}|{widget.resource_id}",
    ]
    hashed = _hash_tokens(tokens, cfg.action_dim, cfg._murmur_seed, offset=EVENT_BLOCK)
    vector[EVENT_BLOCK:] = hashed[EVENT_BLOCK:]
    return vector


def encode_goal(cfg: EncoderConfig, goal: int, table: FunctionTable) -> np.ndarray:
    signature = table.signature(goal)
    return _hash_tokens([token for token in signature.split(".") if token], cfg.goal_dim, cfg._murmur_seed)


def encode_input(
    cfg: EncoderConfig, state: GuiState, action: ActionSpec, goal: int, table: FunctionTable
) -> np.ndarray:
    return np.concatenate(
        [encode_state(cfg, state), encode_action(cfg, action, state), encode_goal(cfg, goal, table)]
    )


def state_key(state: Union[GuiState, Screen]) -> str:
    """Canonical digest of a screen's structure; text is left out"""
    widgets = sorted(
        (w.widget_class, w.resource_id, sorted(event.value for event in w.supported_events)) for w in state.widgets
    )
    return hashlib.sha1(canonical_json([state.activity, widgets]).encode("utf-8")).hexdigest()


class GuiEncoder:
    """Memoizing encoder bound to a config and a function table"""

    def __init__(self, cfg: EncoderConfig, table: FunctionTable, cache_size: int = 4096) -> None:
        self.cfg = cfg
        self.table = table
        self._states: LRUCache[GuiState, np.ndarray] = LRUCache(maxsize=cache_size)
        self._actions: LRUCache[Tuple[GuiState, ActionSpec], np.ndarray] = LRUCache(maxsize=cache_size * 8)
        self._goals: LRUCache[int, np.ndarray] = LRUCache(maxsize=cache_size)

    @property
    def input_dim(self) -> int:
        return self.cfg.input_dim

    def state_vector(self, state: GuiState) -> np.ndarray:
        vector = self._states.get(state)
        if vector is None:
            vector = self._states[state] = encode_state(self.cfg, state)
        return vector

    def action_vector(self, state: GuiState, action: ActionSpec) -> np.ndarray:
        vector = self._actions.get((state, action))
        if vector is None:
            vector = self._actions[(state, action)] = encode_action(self.cfg, action, state)
        return vector

    def goal_vector(self, goal: int) -> np.ndarray:
        vector = self._goals.get(goal)
        if vector is None:
            vector = self._goals[goal] = encode_goal(self.cfg, goal, self.table)
        return vector

    def input_vector(self, state: GuiState, action: ActionSpec, goal: int) -> np.ndarray:
        return np.concatenate([self.state_vector(state), self.action_vector(state, action), self.goal_vector(goal)])

    def candidate_matrix(self, state: GuiState, actions: Sequence[ActionSpec], goal: int) -> np.ndarray:
        """One encoded input row per candidate action"""
        s = self.state_vector(state)
        g = self.goal_vector(goal)
        rows = np.empty((len(actions), self.input_dim), dtype=np.float64)
        rows[:, : self.cfg.state_dim] = s
        rows[:, self.cfg.state_dim + self.cfg.action_dim :] = g
        for i, action in enumerate(actions):
            rows[i, self.cfg.state_dim : self.cfg.state_dim + self.cfg.action_dim] = self.action_vector(state, action)
        return rows
