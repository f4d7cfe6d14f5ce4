import json
from pathlib import Path

import pytest

from aioguiprobe.app.app_generator import BUNDLED_SYNTHETIC, GeneratorSpec, generate_synthetic_app, resolve_app
from aioguiprobe.app.app_model import EXIT, dump_app_model, load_app_model, screen_distances, shortest_trigger_distance
from aioguiprobe.util import ValidationError


def test_reproducible() -> None:
    spec = GeneratorSpec(n_screens=20, n_functions=40, seed=7)
    assert dump_app_model(generate_synthetic_app(spec)) == dump_app_model(generate_synthetic_app(spec))


def test_seed_matters() -> None:
    a = generate_synthetic_app(GeneratorSpec(n_screens=20, n_functions=40, seed=7))
    b = generate_synthetic_app(GeneratorSpec(n_screens=20, n_functions=40, seed=8))
    assert a.fingerprint != b.fingerprint


def test_single_screen() -> None:
    model = generate_synthetic_app(GeneratorSpec(n_screens=1, n_functions=3, branching=3, seed=2))
    for transition in model.transitions:
        for outcome in transition.outcomes:
            assert outcome.to_screen in ("S0", EXIT)


def test_every_function_attached_and_reachable() -> None:
    model = generate_synthetic_app(GeneratorSpec(n_screens=50, n_functions=200, seed=1))
    attached = set()
    for transition in model.transitions:
        for outcome in transition.outcomes:
            attached |= outcome.covered_functions
    assert attached == set(model.function_table.ids)
    assert set(screen_distances(model)) == set(model.screens)
    assert all(shortest_trigger_distance(model, f) is not None for f in model.function_table.ids)


def test_changed_sets_are_declared_functions() -> None:
    model = generate_synthetic_app(BUNDLED_SYNTHETIC["synth_a"])
    assert len(model.function_table.changed_sets) == 5
    for members in model.function_table.changed_sets.values():
        assert all(f in model.function_table for f in members)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_screens": 0, "n_functions": 1},
        {"n_screens": 3, "n_functions": 1, "branching": 0},
        {"n_screens": 3, "n_functions": 1, "noop_fraction": 1.0},
        {"n_screens": 3, "n_functions": 1, "noop_fraction": 0.6, "exit_fraction": 0.5},
    ],
)
def test_invalid_spec(kwargs: dict) -> None:
    with pytest.raises(ValidationError):
        generate_synthetic_app(GeneratorSpec(**kwargs))


def test_spec_file_round_trip(tmp_path: Path) -> None:
    spec = GeneratorSpec(n_screens=5, n_functions=6, seed=4, name="small")
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert GeneratorSpec.load(path) == spec
    with pytest.raises(ValidationError, match="Unknown generator"):
        GeneratorSpec.from_dict({**spec.to_dict(), "colour": "red"})


def test_resolve_app(tmp_path: Path) -> None:
    assert resolve_app("diary_toy").name == "diary_toy"
    assert resolve_app("synth_b").name == "synth_b"
    path = tmp_path / "app.json"
    path.write_text(dump_app_model(resolve_app("diary_toy")))
    assert resolve_app(path).fingerprint == load_app_model(path).fingerprint
    with pytest.raises(ValidationError, match="Unknown app"):
        resolve_app("no_such_app")
