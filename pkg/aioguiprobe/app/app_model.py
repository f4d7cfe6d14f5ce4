from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import lcm
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from aioguiprobe.util import ParseError, ValidationError, fingerprint


logger = logging.getLogger(__name__)

EXIT = "EXIT"
UNREACHABLE = None
DEFAULT_SCREEN_SIZE = (1080, 1920)
FIXTURES_DIR = Path(__file__).parent / "fixtures"


class EventKind(str, Enum):
    back = "back"
    click = "click"
    long_click = "long_click"
    scroll = "scroll"
    text_input = "text_input"

    @property
    def ordinal(self) -> int:
        return list(EventKind).index(self)


DEFAULT_TEXT_PAYLOAD = "test"


@dataclass(frozen=True)
class FunctionTable:
    entries: Mapping[int, str]
    changed_sets: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)

    def __contains__(self, function_id: object) -> bool:
        return function_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.entries))

    def signature(self, function_id: int) -> str:
        try:
            return self.entries[function_id]
        except KeyError:
            raise ValidationError(f"Unknown function id {function_id}")

    def changed_set(self, name: str) -> Tuple[int, ...]:
        try:
            return self.changed_sets[name]
        except KeyError:
            raise ValidationError(f"Unknown changed set {name!r}")

    def is_listener(self, function_id: int) -> bool:
        """Callbacks bound to GUI events: the method name looks like `onSomething`"""
        method = self.signature(function_id).rsplit(".", 1)[-1]
        return len(method) > 2 and method.startswith("on") and method[2].isupper()


@dataclass(frozen=True)
class Widget:
    widget_class: str
    resource_id: str
    text: str
    bounds: Tuple[int, int, int, int]
    supported_events: Tuple[EventKind, ...]
    dynamic: bool = False

    def to_dict(self) -> Dict[str, Any]:
        ret: Dict[str, Any] = {
            "class": self.widget_class,
            "resource_id": self.resource_id,
            "text": self.text,
            "bounds": list(self.bounds),
            "events": [event.value for event in self.supported_events],
        }
        if self.dynamic:
            ret["dynamic"] = True
        return ret

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> Widget:
        bounds = tuple(int(x) for x in data["bounds"])
        if len(bounds) != 4:
            raise ParseError(f"Widget bounds need 4 integers (left, top, right, bottom), got {list(bounds)}")
        return Widget(
            widget_class=str(data["class"]),
            resource_id=str(data.get("resource_id", "")),
            text=str(data.get("text", "")),
            bounds=bounds,  # type: ignore[arg-type]
            supported_events=tuple(EventKind(event) for event in data["events"]),
            dynamic=bool(data.get("dynamic", False)),
        )


@dataclass(frozen=True)
class Screen:
    screen_id: str
    activity: str
    widgets: Tuple[Widget, ...] = ()


@dataclass(frozen=True)
class ActionSpec:
    event_kind: EventKind
    widget_index: Optional[int] = None
    payload: Optional[str] = None

    @property
    def slot(self) -> Tuple[EventKind, Optional[int]]:
        return (self.event_kind, self.widget_index)

    def __str__(self) -> str:
        if self.widget_index is None:
            return self.event_kind.value
        return f"{self.event_kind.value}(w{self.widget_index})"

    def to_dict(self) -> Dict[str, Any]:
        ret: Dict[str, Any] = {"event": self.event_kind.value}
        if self.widget_index is not None:
            ret["widget"] = self.widget_index
        if self.payload is not None:
            ret["payload"] = self.payload
        return ret

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> ActionSpec:
        widget = data.get("widget")
        return ActionSpec(
            event_kind=EventKind(data["event"]),
            widget_index=int(widget) if widget is not None else None,
            payload=data.get("payload"),
        )


@dataclass(frozen=True)
class Outcome:
    probability: Fraction
    to_screen: str
    covered_functions: frozenset[int] = frozenset()


@dataclass(frozen=True)
class Transition:
    from_screen: str
    action: ActionSpec
    outcomes: Tuple[Outcome, ...]


@dataclass(frozen=True)
class GuiState:
    """A screen as rendered on the device, dynamic text included"""

    screen_id: str
    activity: str
    widgets: Tuple[Widget, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "screen": self.screen_id,
            "activity": self.activity,
            "widgets": [widget.to_dict() for widget in self.widgets],
        }

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> GuiState:
        return GuiState(
            screen_id=str(data["screen"]),
            activity=str(data["activity"]),
            widgets=tuple(Widget.from_dict(w) for w in data.get("widgets", ())),
        )


class StepResult(NamedTuple):
    next: GuiState
    covered: frozenset[int]
    exited: bool


@dataclass(frozen=True)
class AppModel:
    name: str
    version: str
    entry_screen: str
    screens: Mapping[str, Screen]
    transitions: Tuple[Transition, ...]
    function_table: FunctionTable
    screen_size: Tuple[int, int] = DEFAULT_SCREEN_SIZE
    _index: Dict[Tuple[str, Tuple[EventKind, Optional[int]]], Transition] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _by_screen: Dict[str, List[Transition]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for transition in self.transitions:
            self._index.setdefault((transition.from_screen, transition.action.slot), transition)
            self._by_screen.setdefault(transition.from_screen, []).append(transition)

    def screen(self, screen_id: str) -> Screen:
        try:
            return self.screens[screen_id]
        except KeyError:
            raise ValidationError(f"Unknown screen {screen_id!r}")

    def transition(self, screen_id: str, action: ActionSpec) -> Optional[Transition]:
        return self._index.get((screen_id, action.slot))

    def transitions_from(self, screen_id: str) -> List[Transition]:
        return self._by_screen.get(screen_id, [])

    @property
    def fingerprint(self) -> str:
        return fingerprint(app_model_to_dict(self))


def render_state(screen: Screen, rng: Optional[np.random.Generator] = None) -> GuiState:
    widgets = screen.widgets
    if rng is not None and any(widget.dynamic for widget in widgets):
        widgets = tuple(
            Widget(w.widget_class, w.resource_id, f"{w.text} {int(rng.integers(10000))}".strip(), w.bounds,
                   w.supported_events, w.dynamic)
            if w.dynamic else w
            for w in widgets
        )
    return GuiState(screen.screen_id, screen.activity, widgets)


def initial_state(model: AppModel, rng: Optional[np.random.Generator] = None) -> GuiState:
    return render_state(model.screen(model.entry_screen), rng)


def state_actions(state: GuiState) -> List[ActionSpec]:
    """Actions available on a rendered screen; needs nothing but the widget snapshot"""
    actions: List[ActionSpec] = []
    for index, widget in enumerate(state.widgets):
        for event in sorted(set(widget.supported_events) - {EventKind.back}, key=lambda e: e.value):
            payload = DEFAULT_TEXT_PAYLOAD if event == EventKind.text_input else None
            actions.append(ActionSpec(event, index, payload))
    actions.append(ActionSpec(EventKind.back))
    return actions


def enumerate_actions(model: AppModel, state: GuiState) -> List[ActionSpec]:
    model.screen(state.screen_id)
    return state_actions(state)


def _check_action(model: AppModel, state: GuiState, action: ActionSpec) -> None:
    screen = model.screen(state.screen_id)
    if action.widget_index is None:
        if action.event_kind != EventKind.back:
            raise ValidationError(f"Screen-level action must be back, got {action}")
        return
    if action.event_kind == EventKind.back:
        raise ValidationError(f"Back is a screen-level action, got {action}")
    if not 0 <= action.widget_index < len(screen.widgets):
        raise ValidationError(f"Widget index {action.widget_index} out of range on screen {screen.screen_id!r}")
    if action.event_kind not in screen.widgets[action.widget_index].supported_events:
        raise ValidationError(f"Widget {action.widget_index} on {screen.screen_id!r} does not support {action.event_kind.value}")


def sample_outcome(outcomes: Sequence[Outcome], rng: np.random.Generator) -> Outcome:
    if len(outcomes) == 1:
        return outcomes[0]
    # Exact integer sampling over the common denominator
    denominator = lcm(*(outcome.probability.denominator for outcome in outcomes))
    draw = int(rng.integers(denominator))
    cumulative = 0
    for outcome in outcomes:
        cumulative += outcome.probability.numerator * (denominator // outcome.probability.denominator)
        if draw < cumulative:
            return outcome
    return outcomes[-1]


def step(model: AppModel, state: GuiState, action: ActionSpec, rng: np.random.Generator) -> StepResult:
    _check_action(model, state, action)
    transition = model.transition(state.screen_id, action)
    if transition is None:
        return StepResult(state, frozenset(), False)

    outcome = sample_outcome(transition.outcomes, rng)
    if outcome.to_screen == EXIT:
        return StepResult(initial_state(model, rng), outcome.covered_functions, True)
    return StepResult(render_state(model.screen(outcome.to_screen), rng), outcome.covered_functions, False)


def screen_distances(model: AppModel) -> Dict[str, int]:
    """BFS distances from the entry screen; every positive-probability outcome is traversable"""
    distances = {model.entry_screen: 0}
    queue = deque([model.entry_screen])
    while queue:
        screen_id = queue.popleft()
        for transition in model.transitions_from(screen_id):
            for outcome in transition.outcomes:
                target = model.entry_screen if outcome.to_screen == EXIT else outcome.to_screen
                if target not in distances:
                    distances[target] = distances[screen_id] + 1
                    queue.append(target)
    return distances


def bfs_depth(model: AppModel) -> int:
    return max(screen_distances(model).values())


class WitnessStep(NamedTuple):
    screen_id: str
    action: ActionSpec
    outcome: Outcome


def trigger_witness(model: AppModel, function_id: int) -> Optional[List[WitnessStep]]:
    """Shortest action path from the entry screen whose last outcome covers `function_id`"""
    if function_id not in model.function_table:
        raise ValidationError(f"Unknown function id {function_id}")

    parents: Dict[str, Optional[WitnessStep]] = {model.entry_screen: None}
    queue = deque([model.entry_screen])
    while queue:
        screen_id = queue.popleft()
        for transition in model.transitions_from(screen_id):
            for outcome in transition.outcomes:
                if function_id in outcome.covered_functions:
                    path = [WitnessStep(screen_id, transition.action, outcome)]
                    parent = parents[screen_id]
                    while parent is not None:
                        path.append(parent)
                        parent = parents[parent.screen_id]
                    return path[::-1]
            for outcome in transition.outcomes:
                target = model.entry_screen if outcome.to_screen == EXIT else outcome.to_screen
                if target not in parents:
                    parents[target] = WitnessStep(screen_id, transition.action, outcome)
                    queue.append(target)
    return None


def shortest_trigger_distance(model: AppModel, function_id: int) -> Optional[int]:
    """
    Fewest actions from the entry screen to an outcome covering `function_id`.
    Every outcome with positive probability counts as traversable, however
    unlikely, so this is a lower bound on what a lucky explorer needs.
    """
    witness = trigger_witness(model, function_id)
    return UNREACHABLE if witness is None else len(witness)


def _parse_probability(data: Any) -> Fraction:
    if isinstance(data, Mapping):
        return Fraction(int(data["num"]), int(data["den"]))
    if isinstance(data, int):
        return Fraction(data)
    raise ValidationError(f"Probabilities must be {{num, den}} pairs, got {data!r}")


def app_model_from_dict(data: Mapping[str, Any]) -> AppModel:
    try:
        functions = {int(k): str(v) for k, v in data.get("functions", {}).items()}
        changed_sets = {str(k): tuple(int(x) for x in v) for k, v in data.get("changed_sets", {}).items()}
        screen_size = data.get("screen_size", {})
        screens: Dict[str, Screen] = {}
        for screen_data in data["screens"]:
            screen = Screen(
                screen_id=str(screen_data["id"]),
                activity=str(screen_data["activity"]),
                widgets=tuple(Widget.from_dict(w) for w in screen_data.get("widgets", ())),
            )
            if screen.screen_id in screens:
                raise ValidationError(f"Duplicate screen id {screen.screen_id!r}")
            screens[screen.screen_id] = screen
        transitions = tuple(
            Transition(
                from_screen=str(t["from"]),
                action=ActionSpec.from_dict(t["action"]),
                outcomes=tuple(
                    Outcome(
                        probability=_parse_probability(o.get("p", 1)),
                        to_screen=str(o["to"]),
                        covered_functions=frozenset(int(x) for x in o.get("covers", ())),
                    )
                    for o in t["outcomes"]
                ),
            )
            for t in data.get("transitions", ())
        )
        model = AppModel(
            name=str(data["name"]),
            version=str(data.get("version", "0")),
            entry_screen=str(data["entry"]),
            screens=screens,
            transitions=transitions,
            function_table=FunctionTable(functions, changed_sets),
            screen_size=(
                int(screen_size.get("width", DEFAULT_SCREEN_SIZE[0])),
                int(screen_size.get("height", DEFAULT_SCREEN_SIZE[1])),
            ),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ParseError(f"Malformed app model: {e!r}")
    validate_app_model(model)
    return model


def app_model_to_dict(model: AppModel) -> Dict[str, Any]:
    def probability(p: Fraction) -> Dict[str, int]:
        return {"num": p.numerator, "den": p.denominator}

    return {
        "name": model.name,
        "version": model.version,
        "entry": model.entry_screen,
        "screen_size": {"width": model.screen_size[0], "height": model.screen_size[1]},
        "screens": [
            {"id": s.screen_id, "activity": s.activity, "widgets": [w.to_dict() for w in s.widgets]}
            for s in model.screens.values()
        ],
        "transitions": [
            {
                "from": t.from_screen,
                "action": t.action.to_dict(),
                "outcomes": [
                    {"p": probability(o.probability), "to": o.to_screen, "covers": sorted(o.covered_functions)}
                    for o in t.outcomes
                ],
            }
            for t in model.transitions
        ],
        "functions": {str(k): v for k, v in sorted(model.function_table.entries.items())},
        "changed_sets": {k: list(v) for k, v in model.function_table.changed_sets.items()},
    }


def dump_app_model(model: AppModel) -> str:
    return json.dumps(app_model_to_dict(model), indent=1, sort_keys=False, ensure_ascii=False) + "\n"


def validate_app_model(model: AppModel) -> None:
    """Raises ValidationError naming the first violated invariant"""
    from aioguiprobe.encoder import state_key

    table = model.function_table
    for function_id in table.entries:
        if function_id < 0:
            raise ValidationError(f"Function id {function_id} is negative")
    for name, members in table.changed_sets.items():
        for function_id in members:
            if function_id not in table:
                raise ValidationError(f"Changed set {name!r} references undefined function {function_id}")

    width, height = model.screen_size
    for screen in model.screens.values():
        for index, widget in enumerate(screen.widgets):
            left, top, right, bottom = widget.bounds
            if not (left < right and top < bottom):
                raise ValidationError(f"Widget {index} on screen {screen.screen_id!r} has ill-ordered bounds {widget.bounds}")
            if left < 0 or top < 0 or right > width or bottom > height:
                raise ValidationError(f"Widget {index} on screen {screen.screen_id!r} lies outside the {width}x{height} screen")
            if not widget.supported_events:
                raise ValidationError(f"Widget {index} on screen {screen.screen_id!r} supports no events")

    if model.entry_screen not in model.screens:
        raise ValidationError(f"Entry screen {model.entry_screen!r} is not declared")

    seen_slots = set()
    for transition in model.transitions:
        if transition.from_screen not in model.screens:
            raise ValidationError(f"Transition references undefined screen {transition.from_screen!r}")
        slot = (transition.from_screen, transition.action.slot)
        if slot in seen_slots:
            raise ValidationError(f"Duplicate transition for {transition.action} on screen {transition.from_screen!r}")
        seen_slots.add(slot)
        _check_action(model, render_state(model.screens[transition.from_screen]), transition.action)
        if not transition.outcomes:
            raise ValidationError(f"Transition {transition.action} on {transition.from_screen!r} has no outcomes")
        total = Fraction(0)
        for outcome in transition.outcomes:
            if not 0 < outcome.probability <= 1:
                raise ValidationError(f"Outcome probability {outcome.probability} on {transition.from_screen!r} not in (0, 1]")
            total += outcome.probability
            if outcome.to_screen != EXIT and outcome.to_screen not in model.screens:
                raise ValidationError(f"Transition references undefined screen {outcome.to_screen!r}")
            for function_id in outcome.covered_functions:
                if function_id not in table:
                    raise ValidationError(f"Transition references undefined function {function_id}")
        if total != 1:
            raise ValidationError(f"Outcome probabilities of {transition.action} on {transition.from_screen!r} sum to {total}")

    reachable = screen_distances(model)
    unreachable = [screen_id for screen_id in model.screens if screen_id not in reachable]
    if unreachable:
        logger.warning("%s: screens unreachable from %s: %s", model.name, model.entry_screen, ", ".join(unreachable))

    keys: Dict[str, str] = {}
    for screen in model.screens.values():
        key = state_key(render_state(screen))
        if key in keys:
            logger.warning("%s: screens %s and %s are indistinguishable", model.name, keys[key], screen.screen_id)
        keys.setdefault(key, screen.screen_id)


def load_app_model(path: Path | str) -> AppModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}")
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return app_model_from_dict(data)


def load_fixture(name: str) -> AppModel:
    return load_app_model(FIXTURES_DIR / f"{name}.json")


def bundled_fixtures() -> List[str]:
    return sorted(path.stem for path in FIXTURES_DIR.glob("*.json"))

