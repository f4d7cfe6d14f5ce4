import json
from pathlib import Path

from typer.testing import CliRunner

from aioguiprobe.app.app_generator import BUNDLED_SYNTHETIC, generate_synthetic_app
from aioguiprobe.app.app_model import load_app_model
from aioguiprobe.harness.experiment import LISTENER_STUDY_REPEATS
from aioguiprobe.harness.harness_main import build_spec
from aioguiprobe.main import app


runner = CliRunner()


def test_gen_app_bundled(tmp_path: Path) -> None:
    out = tmp_path / "synth_a.json"
    result = runner.invoke(app, ["gen-app", "--bundled", "synth_a", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert load_app_model(out).fingerprint == generate_synthetic_app(BUNDLED_SYNTHETIC["synth_a"]).fingerprint


def test_gen_app_from_flags(tmp_path: Path) -> None:
    out = tmp_path / "small.json"
    result = runner.invoke(app, ["gen-app", "--screens", "3", "--functions", "5", "--seed", "2", "-o", str(out)])
    assert result.exit_code == 0, result.output
    data = json.loads(out.read_text())
    assert len(data["screens"]) == 3
    assert len(data["functions"]) == 5


def test_validation_errors_exit_2() -> None:
    result = runner.invoke(app, ["gen-app", "--bundled", "synth_z"])
    assert result.exit_code == 2
    assert "synth_z" in result.output


def test_malformed_app_file_exits_2(tmp_path: Path) -> None:
    bad = tmp_path / "bad.json"
    bad.write_bytes(b"\xff\xfe")
    result = runner.invoke(app, ["baseline", "--app", str(bad), "--out", str(tmp_path), "--no-progress"])
    assert result.exit_code == 2, result.output


def test_guided_evaluation_without_checkpoint(tmp_path: Path) -> None:
    result = runner.invoke(app, ["evaluate", "--policy", "guided", "--out", str(tmp_path), "--no-progress"])
    assert result.exit_code == 2
    assert "checkpoint" in result.output


def test_baseline_and_report(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["baseline", "-k", "3", "--budget", "30", "--max-steps", "10", "--out", str(tmp_path), "--no-progress"]
    )
    assert result.exit_code == 0, result.output
    (run_dir,) = tmp_path.glob("baseline-*")
    result = runner.invoke(app, ["report", str(run_dir)])
    assert result.exit_code == 0
    assert "Target coverage" in result.output
    result = runner.invoke(app, ["replay", str(run_dir)])
    assert result.exit_code == 0
    assert "identical" in result.output


def test_build_spec_overrides(tmp_path: Path) -> None:
    spec = build_spec(None, budget=70, seeds=[4, 5], trainer={"min_fill": None})
    assert spec.budget == 70
    assert spec.seeds == (4, 5)
    assert spec.trainer.min_fill == 1_000
    assert build_spec(None, targets="listener").repeats == LISTENER_STUDY_REPEATS
    assert build_spec(None, targets="listener", repeats=2).repeats == 2

    config = tmp_path / "spec.json"
    config.write_text(json.dumps({"budget": 9, "trainer": {"min_fill": 5}}))
    spec = build_spec(config, seeds=[], trainer={"min_fill": 7})
    assert spec.budget == 9
    assert spec.trainer.min_fill == 7
    assert spec.seeds == (0,)
