from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from aioguiprobe.app.app_model import (
    DEFAULT_SCREEN_SIZE,
    EXIT,
    ActionSpec,
    AppModel,
    EventKind,
    FunctionTable,
    Outcome,
    Screen,
    Transition,
    Widget,
    bundled_fixtures,
    load_app_model,
    load_fixture,
    validate_app_model,
)
from aioguiprobe.util import ParseError, ValidationError


WIDGET_KINDS: Tuple[Tuple[str, Tuple[EventKind, ...]], ...] = (
    ("android.widget.Button", (EventKind.click,)),
    ("android.widget.ImageButton", (EventKind.click, EventKind.long_click)),
    ("android.widget.EditText", (EventKind.click, EventKind.text_input)),
    ("android.widget.TextView", (EventKind.click,)),
    ("androidx.recyclerview.widget.RecyclerView", (EventKind.click, EventKind.scroll)),
    ("android.widget.CheckBox", (EventKind.click,)),
)
LISTENER_NAMES = ("onClick", "onLongClick", "onTextChanged", "onScroll", "onItemSelected", "onCheckedChanged")
HELPER_NAMES = ("update", "load", "persist", "render", "validate", "notify")


@dataclass(frozen=True)
class GeneratorSpec:
    n_screens: int
    n_functions: int
    branching: int = 4
    noop_fraction: float = 0.2
    exit_fraction: float = 0.02
    seed: int = 0
    stochastic_fraction: float = 0.05
    n_changed_sets: int = 5
    max_changed_set_size: int = 3
    name: Optional[str] = None

    def validate(self) -> None:
        if self.n_screens < 1:
            raise ValidationError("n_screens must be >= 1")
        if self.branching < 1:
            raise ValidationError("branching must be >= 1")
        if self.n_functions < 0:
            raise ValidationError("n_functions must be >= 0")
        for name in ("noop_fraction", "exit_fraction", "stochastic_fraction"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValidationError(f"{name} must be in [0, 1), got {value}")
        if self.noop_fraction + self.exit_fraction >= 1:
            raise ValidationError("noop_fraction + exit_fraction must be < 1")
        if self.n_changed_sets < 0 or self.max_changed_set_size < 1:
            raise ValidationError("changed sets need n_changed_sets >= 0 and max_changed_set_size >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> GeneratorSpec:
        known = {f.name for f in fields(GeneratorSpec)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"Unknown generator parameters: {', '.join(sorted(unknown))}")
        try:
            return GeneratorSpec(**data)
        except TypeError as e:
            raise ValidationError(f"Invalid generator spec: {e}")

    @staticmethod
    def load(path: Path | str) -> GeneratorSpec:
        try:
            return GeneratorSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}")


# Desk-scale stand-ins for a suite of real apps
BUNDLED_SYNTHETIC: Mapping[str, GeneratorSpec] = {
    "synth_a": GeneratorSpec(n_screens=50, n_functions=150, branching=4, seed=11, name="synth_a"),
    "synth_b": GeneratorSpec(n_screens=60, n_functions=180, branching=5, noop_fraction=0.3, seed=23, name="synth_b"),
    "synth_c": GeneratorSpec(n_screens=75, n_functions=200, branching=3, exit_fraction=0.05, seed=37, name="synth_c"),
}


def _layout(index: int, n_widgets: int) -> Tuple[int, int, int, int]:
    width, height = DEFAULT_SCREEN_SIZE
    slot = (height - 200) // max(n_widgets, 1)
    top = 200 + index * slot
    return (40, top, width - 40, top + max(slot - 20, 10))


def generate_synthetic_app(spec: GeneratorSpec) -> AppModel:
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    screens: Dict[str, Screen] = {}
    slots: Dict[str, List[ActionSpec]] = {}
    for s in range(spec.n_screens):
        screen_id = f"S{s}"
        widgets = []
        for w in range(spec.branching):
            widget_class, events = WIDGET_KINDS[int(rng.integers(len(WIDGET_KINDS)))]
            widgets.append(
                Widget(
                    widget_class=widget_class,
                    resource_id=f"com.synth:id/s{s}_w{w}",
                    text=f"Item {w}" if widget_class.endswith(("TextView", "Button")) else "",
                    bounds=_layout(w, spec.branching),
                    supported_events=events,
                )
            )
        screens[screen_id] = Screen(screen_id, f"com.synth.app.Screen{s}Activity", tuple(widgets))
        slots[screen_id] = [
            ActionSpec(event, w, "test" if event == EventKind.text_input else None)
            for w, widget in enumerate(widgets)
            for event in sorted(widget.supported_events, key=lambda e: e.value)
        ]
        rng.shuffle(slots[screen_id])  # type: ignore[arg-type]

    # Spanning tree from the entry screen keeps every screen reachable
    declared: Dict[Tuple[str, ActionSpec], List[Tuple[Fraction, str]]] = {}
    for s in range(1, spec.n_screens):
        candidates = [p for p in range(s) if slots[f"S{p}"]]
        if not candidates:
            raise ValidationError(
                f"Infeasible generator spec: {spec.n_screens - 1} tree transitions need more than the available action slots"
            )
        parent = candidates[int(rng.integers(len(candidates)))]
        declared[(f"S{parent}", slots[f"S{parent}"].pop())] = [(Fraction(1), f"S{s}")]

    for s in range(spec.n_screens):
        screen_id = f"S{s}"
        for action in slots[screen_id]:
            roll = rng.random()
            if roll < spec.noop_fraction and (declared or spec.n_functions == 0):
                continue
            if roll < spec.noop_fraction + spec.exit_fraction:
                declared[(screen_id, action)] = [(Fraction(1), EXIT)]
                continue
            target = f"S{int(rng.integers(spec.n_screens))}"
            if rng.random() < spec.stochastic_fraction:
                other = f"S{int(rng.integers(spec.n_screens))}"
                declared[(screen_id, action)] = [(Fraction(1, 2), target), (Fraction(1, 2), other)]
            else:
                declared[(screen_id, action)] = [(Fraction(1), target)]

    if spec.n_functions > 0 and not declared:
        raise ValidationError("Infeasible generator spec: no action slot left to attach functions to")

    # Every function lands on at least one declared outcome
    outcome_slots = [(key, i) for key, outcomes in declared.items() for i in range(len(outcomes))]
    order = rng.permutation(len(outcome_slots))
    covers: Dict[Tuple[Tuple[str, ActionSpec], int], set[int]] = {}
    function_ids = [int(f) for f in rng.permutation(spec.n_functions)]
    for k, function_id in enumerate(function_ids):
        covers.setdefault(outcome_slots[int(order[k % len(order)])], set()).add(function_id)

    entries: Dict[int, str] = {}
    for function_id in range(spec.n_functions):
        if rng.random() < 0.6:
            name = LISTENER_NAMES[int(rng.integers(len(LISTENER_NAMES)))]
            entries[function_id] = f"com.synth.app.ui.Handler{function_id}.{name}"
        else:
            name = HELPER_NAMES[int(rng.integers(len(HELPER_NAMES)))]
            entries[function_id] = f"com.synth.app.core.Repository{function_id}.{name}"

    transitions = []
    for s in range(spec.n_screens):
        screen_id = f"S{s}"
        own = sorted(
            (action for (sid, action) in declared if sid == screen_id),
            key=lambda a: (a.widget_index, a.event_kind.value),
        )
        for action in own:
            outcomes = declared[(screen_id, action)]
            transitions.append(
                Transition(
                    screen_id,
                    action,
                    tuple(
                        Outcome(p, to, frozenset(covers.get(((screen_id, action), i), set())))
                        for i, (p, to) in enumerate(outcomes)
                    ),
                )
            )
        back_to = EXIT if s == 0 else f"S{int(rng.integers(s))}"
        transitions.append(Transition(screen_id, ActionSpec(EventKind.back), (Outcome(Fraction(1), back_to),)))

    changed_sets: Dict[str, Tuple[int, ...]] = {}
    if spec.n_functions > 0:
        for c in range(spec.n_changed_sets):
            size = int(rng.integers(1, min(spec.max_changed_set_size, spec.n_functions) + 1))
            members = rng.choice(spec.n_functions, size=size, replace=False)
            changed_sets[f"commit_{c + 1}"] = tuple(sorted(int(m) for m in members))

    model = AppModel(
        name=spec.name or f"synthetic_{spec.seed}",
        version="1.0",
        entry_screen="S0",
        screens=screens,
        transitions=tuple(transitions),
        function_table=FunctionTable(entries, changed_sets),
    )
    validate_app_model(model)
    return model


def resolve_app(ref: str | Path) -> AppModel:
    """An app model file, a bundled fixture name or a bundled synthetic app name"""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return load_app_model(path)
    if str(ref) in bundled_fixtures():
        return load_fixture(str(ref))
    if str(ref) in BUNDLED_SYNTHETIC:
        return generate_synthetic_app(BUNDLED_SYNTHETIC[str(ref)])
    known = ", ".join([*bundled_fixtures(), *BUNDLED_SYNTHETIC])
    raise ValidationError(f"Unknown app {str(ref)!r}: not a file, nor one of {known}")
